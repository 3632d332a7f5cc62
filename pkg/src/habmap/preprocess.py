"""Per-family feature preprocessing pipelines.

Feature kinds: continuous, ordinal, cyclical (with a declared period),
categorical, day_count, frequency (with a declared total). Each algorithm
family (bagging, boosting, neural) gets its own encoding rules; fitted
pipelines are immutable and their output layout is a pure function of the
schema, the family, and the categories seen at fit time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FAMILIES = ("bagging", "boosting", "neural")
KINDS = ("continuous", "ordinal", "cyclical", "categorical", "day_count", "frequency")

MISSING_TOKEN = "<missing>"
OTHER_TOKEN = "<other>"

DAYS_PER_YEAR = 365.0


class SchemaError(ValueError):
    """Bad feature schema or value that does not conform to it."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    period: float | None = None          # cyclical
    total: float | None = None           # frequency
    categories: tuple[str, ...] | None = None  # categorical; None = learn at fit

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == "cyclical":
            if self.period is None or self.period <= 0:
                raise SchemaError(f"cyclical feature {self.name!r} needs period > 0")
        if self.kind == "frequency":
            if self.total is None or self.total <= 0:
                raise SchemaError(f"frequency feature {self.name!r} needs total > 0")
        if self.categories is not None:
            if not self.categories:
                raise SchemaError(f"categorical feature {self.name!r} has empty category list")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical feature {self.name!r} has duplicate categories")

    @property
    def numeric(self) -> bool:
        return self.kind != "categorical"


class FeatureSchema:
    """Ordered, name-unique collection of feature specs."""

    def __init__(self, specs: Iterable[FeatureSpec]):
        self.specs = tuple(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")
        self._index = {s.name: i for i, s in enumerate(self.specs)}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, name: str) -> FeatureSpec:
        return self.specs[self._index[name]]


def read_schema(path) -> FeatureSchema:
    """Read a TSV schema: `name TAB kind TAB params`.

    Params are space-separated `key=value` tokens, e.g. `period=360`,
    `total=100`, `categories=a|b|c`. The params column may be empty.
    """
    specs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].rstrip("\n")
            if not stripped.strip():
                continue
            parts = stripped.split("\t")
            if len(parts) < 2:
                raise SchemaError(f"{path}:{lineno}: expected `name TAB kind [TAB params]`")
            name, kind = parts[0].strip(), parts[1].strip()
            kwargs: dict = {}
            if len(parts) > 2 and parts[2].strip():
                for token in parts[2].split():
                    key, _, value = token.partition("=")
                    if key == "period":
                        kwargs["period"] = float(value)
                    elif key == "total":
                        kwargs["total"] = float(value)
                    elif key == "categories":
                        kwargs["categories"] = tuple(value.split("|"))
                    else:
                        raise SchemaError(f"{path}:{lineno}: unknown param {key!r}")
            try:
                specs.append(FeatureSpec(name=name, kind=kind, **kwargs))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return FeatureSchema(specs)


def write_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in schema:
            params = []
            if s.period is not None:
                params.append(f"period={_num(s.period)}")
            if s.total is not None:
                params.append(f"total={_num(s.total)}")
            if s.categories is not None:
                params.append("categories=" + "|".join(s.categories))
            fh.write(f"{s.name}\t{s.kind}\t{' '.join(params)}\n")


def _num(v: float) -> str:
    return "%d" % v if float(v).is_integer() else repr(float(v))


@dataclass
class FittedFeature:
    """Fitted parameters and output layout for one input feature."""

    spec: FeatureSpec
    columns: tuple[str, ...]
    center: float = 0.0
    scale: float = 1.0
    lo: float = 0.0
    span: float = 1.0
    categories: tuple[str, ...] = ()

    def to_state(self) -> dict:
        s = self.spec
        return {
            "name": s.name, "kind": s.kind, "period": s.period, "total": s.total,
            "declared": list(s.categories) if s.categories is not None else None,
            "columns": list(self.columns), "center": self.center, "scale": self.scale,
            "lo": self.lo, "span": self.span, "categories": list(self.categories),
        }

    @classmethod
    def from_state(cls, st: dict) -> "FittedFeature":
        spec = FeatureSpec(
            name=st["name"], kind=st["kind"], period=st["period"], total=st["total"],
            categories=tuple(st["declared"]) if st["declared"] is not None else None,
        )
        return cls(
            spec=spec, columns=tuple(st["columns"]), center=st["center"],
            scale=st["scale"], lo=st["lo"], span=st["span"],
            categories=tuple(st["categories"]),
        )


class FittedPipeline:
    """Immutable, family-specific encoder from raw feature rows to a numeric matrix."""

    def __init__(self, schema: FeatureSchema, family: str, features: Sequence[FittedFeature]):
        self.schema = schema
        self.family = family
        self.features = tuple(features)
        self.layout: tuple[str, ...] = tuple(
            col for f in self.features for col in f.columns
        )
        self._cat_index = [
            {c: i for i, c in enumerate(f.categories)} if f.spec.kind == "categorical" else None
            for f in self.features
        ]

    def __len__(self) -> int:
        return len(self.layout)

    def embedding_columns(self) -> list[tuple[int, int]]:
        """(output column, embedding table size) pairs for neural categorical features.

        Table size is the fitted category count plus one reserved index 0 for
        unseen categories.
        """
        if self.family != "neural":
            return []
        out = []
        col = 0
        for f in self.features:
            if f.spec.kind == "categorical":
                out.append((col, len(f.categories) + 1))
            col += len(f.columns)
        return out

    def transform_row(self, values: Sequence) -> np.ndarray:
        if len(values) != len(self.schema):
            raise SchemaError(
                f"row has {len(values)} features, schema declares {len(self.schema)}"
            )
        out = np.empty(len(self.layout), dtype=np.float64)
        pos = 0
        for j, f in enumerate(self.features):
            pos = self._encode(f, self._cat_index[j], values[j], out, pos)
        return out

    def transform(self, rows) -> np.ndarray:
        """Encode a PlotTable, a list of records, or a list of raw value rows."""
        raw = _raw_rows(rows)
        out = np.empty((len(raw), len(self.layout)), dtype=np.float64)
        for i, values in enumerate(raw):
            out[i] = self.transform_row(values)
        return out

    def _encode(self, f: FittedFeature, cat_index, value, out, pos) -> int:
        kind = f.spec.kind
        if kind == "categorical":
            token = MISSING_TOKEN if value is None else str(value)
            idx = cat_index.get(token)
            if self.family == "bagging":
                k = len(f.categories)
                out[pos:pos + k + 1] = 0.0
                out[pos + (idx if idx is not None else k)] = 1.0
                return pos + k + 1
            if self.family == "boosting":
                out[pos] = float(idx) if idx is not None else float(len(f.categories))
                return pos + 1
            out[pos] = float(idx + 1) if idx is not None else 0.0  # neural embedding index
            return pos + 1
        if value is None:
            raise SchemaError(f"missing value for numeric feature {f.spec.name!r}")
        v = float(value)
        if kind == "continuous":
            out[pos] = (v - f.center) / f.scale if self.family == "neural" else v
            return pos + 1
        if kind == "ordinal":
            out[pos] = (v - f.lo) / f.span
            return pos + 1
        if kind == "cyclical":
            angle = 2.0 * math.pi * v / f.spec.period
            out[pos] = math.cos(angle)
            out[pos + 1] = math.sin(angle)
            return pos + 2
        if kind == "day_count":
            out[pos] = v / DAYS_PER_YEAR
            return pos + 1
        out[pos] = v / f.spec.total  # frequency
        return pos + 1

    def to_state(self) -> dict:
        return {
            "family": self.family,
            "features": [f.to_state() for f in self.features],
        }

    @classmethod
    def from_state(cls, st: dict) -> "FittedPipeline":
        features = [FittedFeature.from_state(f) for f in st["features"]]
        schema = FeatureSchema([f.spec for f in features])
        return cls(schema=schema, family=st["family"], features=features)


def _raw_rows(rows) -> list:
    if hasattr(rows, "records"):
        rows = rows.records
    out = []
    for r in rows:
        out.append(r.features if hasattr(r, "features") else r)
    return out


def fit(schema: FeatureSchema, table, family: str) -> FittedPipeline:
    """Fit family-specific per-feature parameters on training rows.

    Rules: continuous is passthrough for trees and center-scale for neural
    nets; ordinal is min-max scaled to [0,1]; cyclical maps to a cos/sin
    pair; categorical is one-hot (bagging), integer codes (boosting), or an
    embedding index (neural); day counts divide by 365 and frequencies by
    their declared total. Out-of-range inference values are not clipped.
    """
    if family not in FAMILIES:
        raise SchemaError(f"unknown family {family!r}")
    raw = _raw_rows(table)
    fitted = []
    for j, spec in enumerate(schema):
        values = [row[j] for row in raw]
        f = FittedFeature(spec=spec, columns=(spec.name,))
        if spec.kind == "categorical":
            if spec.categories is not None:
                cats = tuple(spec.categories)
            else:
                tokens = {MISSING_TOKEN if v is None else str(v) for v in values}
                cats = tuple(sorted(tokens))
            f.categories = cats
            if family == "bagging":
                f.columns = tuple(f"{spec.name}={c}" for c in cats) + (
                    f"{spec.name}={OTHER_TOKEN}",
                )
            elif family == "boosting":
                f.columns = (f"{spec.name}:code",)
            else:
                f.columns = (f"{spec.name}:emb",)
        else:
            nums = []
            for v in values:
                if v is None:
                    raise SchemaError(f"missing value for numeric feature {spec.name!r}")
                nums.append(float(v))
            arr = np.asarray(nums, dtype=np.float64)
            if spec.kind == "continuous" and family == "neural":
                f.center = float(arr.mean()) if arr.size else 0.0
                std = float(arr.std()) if arr.size else 0.0
                if std == 0.0:
                    warnings.warn(
                        f"zero-variance continuous feature {spec.name!r}; scaling by 1"
                    )
                    std = 1.0
                f.scale = std
            elif spec.kind == "ordinal":
                f.lo = float(arr.min()) if arr.size else 0.0
                hi = float(arr.max()) if arr.size else 1.0
                f.span = (hi - f.lo) if hi > f.lo else 1.0
            elif spec.kind == "cyclical":
                f.columns = (f"{spec.name}:cos", f"{spec.name}:sin")
        fitted.append(f)
    return FittedPipeline(schema=schema, family=family, features=fitted)
