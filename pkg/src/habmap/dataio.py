"""Readers and writers for every external artifact format.

Rasters are ESRI ASCII grids (text) with the exact header order `ncols`,
`nrows`, `xllcorner`, `yllcorner`, `cellsize`, `NODATA_value`, followed by
nrows lines of ncols space-separated values, top row northernmost. A cube is
a directory of layer files plus a `manifest.tsv` fixing class order. Plot
tables are CSV, crosswalks and association matrices TSV, and model files a
JSON container with an explicit format-version field that round-trips numpy
arrays bit-identically (base64 of the raw bytes).
"""

from __future__ import annotations

import base64
import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .preprocess import FeatureSchema, FeatureSpec
from .taxonomy import HabitatCode, Taxonomy, TaxonomyError, parse_code

DEFAULT_NODATA = -9999.0

CONTAINER_FORMAT = "habmap-container"
CONTAINER_VERSION = 1


class DataIOError(ValueError):
    """Malformed external file."""


# ---------------------------------------------------------------------------
# Grids


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float = DEFAULT_NODATA

    def describe(self) -> str:
        return (
            f"(ncols={self.ncols} nrows={self.nrows} xll={self.xll} "
            f"yll={self.yll} cellsize={self.cellsize} nodata={self.nodata})"
        )


@dataclass
class Grid:
    """Single-band raster; values shape (nrows, ncols), row 0 northernmost."""

    header: GridHeader
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.header.nrows, self.header.ncols):
            raise DataIOError(
                f"grid values shape {self.values.shape} does not match header "
                f"{self.header.describe()}"
            )

    @property
    def nodata(self) -> float:
        return self.header.nodata

    def nodata_mask(self) -> np.ndarray:
        return self.values == self.header.nodata

    def copy(self) -> "Grid":
        return Grid(self.header, self.values.copy())

    @classmethod
    def full(cls, header: GridHeader, fill: float) -> "Grid":
        return cls(header, np.full((header.nrows, header.ncols), fill, dtype=np.float64))

    def pixel_of(self, x: float, y: float) -> tuple[int, int] | None:
        """(row, col) of the pixel containing the point, or None if outside."""
        h = self.header
        col = math.floor((x - h.xll) / h.cellsize)
        row_s = math.floor((y - h.yll) / h.cellsize)  # rows counted from south
        if not (0 <= col < h.ncols and 0 <= row_s < h.nrows):
            return None
        return h.nrows - 1 - row_s, col


def _fmt_header_num(v: float) -> str:
    return "%d" % v if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def write_grid(grid: Grid, path) -> None:
    h = grid.header
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"ncols {h.ncols}\n")
        fh.write(f"nrows {h.nrows}\n")
        fh.write(f"xllcorner {_fmt_header_num(h.xll)}\n")
        fh.write(f"yllcorner {_fmt_header_num(h.yll)}\n")
        fh.write(f"cellsize {_fmt_header_num(h.cellsize)}\n")
        fh.write(f"NODATA_value {_fmt_header_num(h.nodata)}\n")
        for row in grid.values:
            fh.write(" ".join("%.6g" % v for v in row))
            fh.write("\n")


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_grid(path) -> Grid:
    with open(path, "r", encoding="ascii") as fh:
        header_vals = []
        for key in _HEADER_KEYS:
            line = fh.readline()
            parts = line.split()
            if len(parts) != 2 or parts[0].lower() != key:
                raise DataIOError(f"{path}: expected header line {key!r}, got {line!r}")
            header_vals.append(parts[1])
        header = GridHeader(
            ncols=int(header_vals[0]),
            nrows=int(header_vals[1]),
            xll=float(header_vals[2]),
            yll=float(header_vals[3]),
            cellsize=float(header_vals[4]),
            nodata=float(header_vals[5]),
        )
        flat = fh.read().split()
    expected = header.ncols * header.nrows
    if len(flat) != expected:
        raise DataIOError(
            f"{path}: expected {expected} values, found {len(flat)}"
        )
    values = np.array(flat, dtype=np.float64).reshape(header.nrows, header.ncols)
    bad = np.isfinite(values) | (values == header.nodata)
    if not bad.all():
        raise DataIOError(f"{path}: non-finite values outside the nodata sentinel")
    return Grid(header, values)


def check_aligned(a: GridHeader, b: GridHeader, what: str = "grids") -> None:
    if a != b:
        raise DataIOError(f"misaligned {what}: {a.describe()} vs {b.describe()}")


# ---------------------------------------------------------------------------
# Cubes (per-class layer stacks)


@dataclass
class Cube:
    """Aligned per-class layer stack; values shape (nclasses, nrows, ncols)."""

    header: GridHeader
    classes: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.classes), self.header.nrows, self.header.ncols):
            raise DataIOError("cube values shape does not match header/classes")
        if len(set(self.classes)) != len(self.classes):
            raise DataIOError("duplicate classes in cube")

    def layer(self, code: str) -> Grid:
        return Grid(self.header, self.values[self.classes.index(code)])

    def nodata_mask(self) -> np.ndarray:
        """Pixels flagged nodata (aligned across layers; checked on layer 0)."""
        return self.values[0] == self.header.nodata


class ProbabilityCube(Cube):
    def validate(self, atol: float = 1e-4) -> None:
        live = ~self.nodata_mask()
        vals = self.values[:, live]
        if vals.size == 0:
            return
        if vals.min() < -atol or vals.max() > 1 + atol:
            raise DataIOError("probability outside [0,1]")
        sums = vals.sum(axis=0)
        if np.abs(sums - 1.0).max() > atol:
            raise DataIOError(
                f"probabilities do not sum to 1 (worst deviation {np.abs(sums - 1).max():.2e})"
            )


class MaskCube(Cube):
    def validate(self) -> None:
        ok = (self.values == 0) | (self.values == 1) | (self.values == self.header.nodata)
        if not ok.all():
            raise DataIOError("mask values must be 0, 1 or nodata")


def write_cube(cube: Cube, dirpath) -> None:
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "manifest.tsv"), "w", encoding="utf-8") as fh:
        for code in cube.classes:
            fh.write(f"{code}\t{code}.asc\n")
    for i, code in enumerate(cube.classes):
        write_grid(Grid(cube.header, cube.values[i]), os.path.join(dirpath, f"{code}.asc"))


def _read_cube(dirpath) -> tuple[GridHeader, tuple[str, ...], np.ndarray]:
    manifest = os.path.join(dirpath, "manifest.tsv")
    entries = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataIOError(f"{manifest}:{lineno}: expected `class TAB filename`")
            entries.append((parts[0], parts[1]))
    if not entries:
        raise DataIOError(f"{manifest}: empty cube manifest")
    header = None
    layers = []
    for code, fname in entries:
        g = read_grid(os.path.join(dirpath, fname))
        if header is None:
            header = g.header
        else:
            check_aligned(header, g.header, f"cube layers in {dirpath}")
        layers.append(g.values)
    classes = tuple(code for code, _ in entries)
    return header, classes, np.stack(layers)


def read_probability_cube(dirpath, validate: bool = True) -> ProbabilityCube:
    header, classes, values = _read_cube(dirpath)
    cube = ProbabilityCube(header, classes, values)
    if validate:
        cube.validate()
    return cube


def read_mask_cube(dirpath) -> MaskCube:
    header, classes, values = _read_cube(dirpath)
    cube = MaskCube(header, classes, values)
    cube.validate()
    return cube


# ---------------------------------------------------------------------------
# Plot tables


@dataclass(frozen=True)
class PlotRecord:
    id: str
    x: float
    y: float
    habitat: HabitatCode
    features: tuple


@dataclass
class PlotTable:
    records: list[PlotRecord]
    schema: FeatureSchema

    def __len__(self) -> int:
        return len(self.records)

    def counts_by_formation(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.habitat.formation] = out.get(r.habitat.formation, 0) + 1
        return dict(sorted(out.items()))

    def counts_by_class(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.habitat.code] = out.get(r.habitat.code, 0) + 1
        return dict(sorted(out.items()))

    def subset(self, keep) -> "PlotTable":
        return PlotTable([r for r in self.records if keep(r)], self.schema)

    def by_formation(self, formation: str) -> "PlotTable":
        return self.subset(lambda r: r.habitat.formation == formation)

    def labels(self) -> np.ndarray:
        return np.array([r.habitat.code for r in self.records], dtype=object)


def read_plots(path, schema: FeatureSchema | None = None,
               taxonomy: Taxonomy | None = None) -> PlotTable:
    """Read a plot CSV with header `id,x,y,habitat,<feature columns...>`.

    When a schema is given the feature columns must match it in order, and
    empty values are legal only for categorical features (kept as missing).
    Without a schema, columns whose non-empty values all parse as numbers are
    inferred continuous and the rest categorical.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise DataIOError(f"{path}: empty file") from None
        if head[:4] != ["id", "x", "y", "habitat"]:
            raise DataIOError(
                f"{path}: header must start with id,x,y,habitat (got {head[:4]})"
            )
        feat_names = head[4:]
        if schema is not None and list(schema.names) != feat_names:
            raise DataIOError(
                f"{path}: feature columns {feat_names} do not match schema "
                f"{list(schema.names)}"
            )
        rows = list(reader)

    if schema is None:
        kinds = []
        for j, name in enumerate(feat_names):
            numeric = True
            for row in rows:
                v = row[4 + j] if len(row) > 4 + j else ""
                if v == "":
                    continue
                try:
                    float(v)
                except ValueError:
                    numeric = False
                    break
            kinds.append("continuous" if numeric else "categorical")
        schema = FeatureSchema(
            [FeatureSpec(name=n, kind=k) for n, k in zip(feat_names, kinds)]
        )

    records = []
    nfeat = len(schema)
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 4 + nfeat:
            raise DataIOError(
                f"{path}:{lineno}: expected {4 + nfeat} columns, found {len(row)}"
            )
        pid, xs, ys, hab = row[0], row[1], row[2], row[3]
        try:
            x, y = float(xs), float(ys)
        except ValueError:
            raise DataIOError(f"{path}:{lineno}: unparseable coordinate {xs!r},{ys!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataIOError(f"{path}:{lineno}: non-finite coordinate")
        try:
            code = parse_code(hab)
        except TaxonomyError as exc:
            raise DataIOError(f"{path}:{lineno}: {exc}") from None
        if code.level != 3:
            raise DataIOError(
                f"{path}:{lineno}: habitat {hab!r} is level {code.level}, expected level 3"
            )
        if taxonomy is not None:
            try:
                taxonomy.validate(code)
            except TaxonomyError as exc:
                raise DataIOError(f"{path}:{lineno}: {exc}") from None
        feats = []
        for j, spec in enumerate(schema):
            v = row[4 + j]
            if v == "":
                if spec.kind != "categorical":
                    raise DataIOError(
                        f"{path}:{lineno}: missing value for numeric feature {spec.name!r}"
                    )
                feats.append(None)
            elif spec.kind == "categorical":
                feats.append(v)
            else:
                try:
                    feats.append(float(v))
                except ValueError:
                    raise DataIOError(
                        f"{path}:{lineno}: bad numeric value {v!r} for {spec.name!r}"
                    ) from None
        records.append(PlotRecord(id=pid, x=x, y=y, habitat=code, features=tuple(feats)))
    return PlotTable(records=records, schema=schema)


def write_plots(table: PlotTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "habitat", *table.schema.names])
        for r in table.records:
            feats = ["" if v is None else (_fmt_value(v)) for v in r.features]
            writer.writerow([r.id, _fmt_value(r.x), _fmt_value(r.y), r.habitat.code, *feats])


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return "%d" % v if v.is_integer() else repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Crosswalk tables


@dataclass
class CrosswalkTable:
    lc_to_classes: dict[int, frozenset[str]]
    lc_priority: dict[int, tuple[str, ...]]

    def allowed_classes(self, lc_code: int) -> frozenset[str]:
        return self.lc_to_classes.get(lc_code, frozenset())

    def priority(self, lc_code: int) -> tuple[str, ...] | None:
        return self.lc_priority.get(lc_code)


def read_crosswalk(path) -> CrosswalkTable:
    """Read a crosswalk TSV with `[classes]` and `[priority]` sections."""
    from .taxonomy import FORMATIONS

    lc_to_classes: dict[int, set[str]] = {}
    lc_priority: dict[int, tuple[str, ...]] = {}
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if stripped.startswith("["):
                if stripped not in ("[classes]", "[priority]"):
                    raise DataIOError(f"{path}:{lineno}: unknown section {stripped!r}")
                section = stripped
                continue
            if section is None:
                raise DataIOError(f"{path}:{lineno}: data before any section header")
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise DataIOError(f"{path}:{lineno}: expected two TAB-separated fields")
            try:
                lc = int(parts[0])
            except ValueError:
                raise DataIOError(f"{path}:{lineno}: bad land-cover code {parts[0]!r}") from None
            if section == "[classes]":
                try:
                    code = parse_code(parts[1].strip())
                except TaxonomyError as exc:
                    raise DataIOError(f"{path}:{lineno}: {exc}") from None
                if code.level != 3:
                    raise DataIOError(
                        f"{path}:{lineno}: habitat {code.code!r} is level {code.level}, "
                        "expected level 3"
                    )
                lc_to_classes.setdefault(lc, set()).add(code.code)
            else:
                tokens = tuple(t.strip() for t in parts[1].split(",") if t.strip())
                for t in tokens:
                    if t not in FORMATIONS:
                        raise DataIOError(f"{path}:{lineno}: unknown formation {t!r}")
                if len(set(tokens)) != len(tokens):
                    raise DataIOError(f"{path}:{lineno}: duplicate formation in priority list")
                lc_priority[lc] = tokens
    return CrosswalkTable(
        lc_to_classes={k: frozenset(v) for k, v in sorted(lc_to_classes.items())},
        lc_priority=dict(sorted(lc_priority.items())),
    )


def write_crosswalk(table: CrosswalkTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[classes]\n")
        for lc, classes in sorted(table.lc_to_classes.items()):
            for code in sorted(classes):
                fh.write(f"{lc}\t{code}\n")
        fh.write("[priority]\n")
        for lc, prio in sorted(table.lc_priority.items()):
            fh.write(f"{lc}\t{','.join(prio)}\n")


# ---------------------------------------------------------------------------
# Association matrix TSV (class TAB region TAB 0/1)


def write_association_tsv(entries: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (code, region) in sorted(entries, key=lambda kr: (kr[0], str(kr[1]))):
            fh.write(f"{code}\t{region}\t{1 if entries[(code, region)] else 0}\n")


def read_association_tsv(path) -> dict:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise DataIOError(f"{path}:{lineno}: expected `class TAB region TAB 0/1`")
            region = int(parts[1]) if parts[1].lstrip("-").isdigit() else parts[1]
            entries[(parts[0], region)] = int(parts[2])
    return entries


# ---------------------------------------------------------------------------
# Model container (JSON with bit-exact ndarray payloads)


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {
            "__nd__": True,
            "dtype": obj.dtype.str,
            "shape": list(obj.shape),
            "data": base64.b64encode(np.ascontiguousarray(obj).tobytes()).decode("ascii"),
        }
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if obj.get("__nd__"):
            raw = base64.b64decode(obj["data"])
            return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def write_container(path, payload: dict) -> None:
    doc = {"format": CONTAINER_FORMAT, "version": CONTAINER_VERSION, "payload": _encode(payload)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def read_container(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CONTAINER_FORMAT:
        raise DataIOError(f"{path}: not a {CONTAINER_FORMAT} file")
    if doc.get("version") != CONTAINER_VERSION:
        raise DataIOError(f"{path}: unsupported container version {doc.get('version')}")
    return _decode(doc["payload"])
