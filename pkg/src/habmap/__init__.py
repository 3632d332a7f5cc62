"""Habitat classification pipeline: spatially blocked cross-validation,
imbalance-aware ensemble training, calibrated rank-weighted prediction with
uncertainty, and rule-based assembly of per-formation probability cubes into
a single wall-to-wall categorical raster."""

__version__ = "0.1.0"
