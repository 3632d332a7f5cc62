"""Spatially blocked stratified cross-validation.

The partition is built in five steps: divide the domain into square cells,
count class frequencies per cell, allocate cells to k folds by greedy
iterative stratification over classes ordered by scarcity, assign every plot
to its cell's fold, and check fold balance. If any fold's plot count
deviates from the mean by more than the declared tolerance the grid is
refined (cell size halved, which only increases allocation freedom) and the
procedure restarts, up to a bounded number of retries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class CellKey:
    col: int
    row: int


def grid_origin(xs, ys, cell_size: float) -> tuple[float, float]:
    """Floor of the min coordinates rounded down to the cell size."""
    x0 = math.floor(min(xs) / cell_size) * cell_size
    y0 = math.floor(min(ys) / cell_size) * cell_size
    return x0, y0


def cell_of(x: float, y: float, origin: tuple[float, float], cell_size: float) -> CellKey:
    return CellKey(
        col=math.floor((x - origin[0]) / cell_size),
        row=math.floor((y - origin[1]) / cell_size),
    )


@dataclass
class SpatialPartition:
    k: int
    cell_size: float
    origin: tuple[float, float]
    assignment: dict[CellKey, int]
    plot_ids: tuple[str, ...]
    plot_cells: tuple[CellKey, ...]
    plot_folds: np.ndarray
    class_freq: dict[CellKey, dict[str, int]]
    deviation: float
    unbalanced: bool = False

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.plot_folds, minlength=self.k)


def iterative_stratify(cells, k: int, seed: int = 0) -> dict[CellKey, int]:
    """Allocate cells to k folds, balancing every class across folds.

    Greedy scheme over classes ordered by scarcity: repeatedly take the
    rarest not-yet-exhausted class and hand its remaining cells (descending
    by that class's count) to the fold with the largest remaining desire for
    it, breaking ties by smallest current fold size and then by seeded RNG.
    Always returns a total assignment.
    """
    if k < 1:
        raise PartitionError("fold count must be >= 1")
    cells = [(key, dict(hist)) for key, hist in cells]
    rng = np.random.default_rng(seed)

    classes = sorted({c for _, hist in cells for c in hist})
    totals = {c: sum(hist.get(c, 0) for _, hist in cells) for c in classes}
    desire = {c: [totals[c] / k] * k for c in classes}
    fold_plots = [0.0] * k
    assignment: dict[CellKey, int] = {}
    unassigned = dict(cells)

    def assign(key: CellKey, fold: int) -> None:
        hist = unassigned.pop(key)
        assignment[key] = fold
        for c, n in hist.items():
            desire[c][fold] -= n
        fold_plots[fold] += sum(hist.values())

    def pick_fold(scores) -> int:
        best = max(scores)
        cand = [f for f in range(k) if scores[f] == best]
        if len(cand) > 1:
            smallest = min(fold_plots[f] for f in cand)
            cand = [f for f in cand if fold_plots[f] == smallest]
        if len(cand) > 1:
            return cand[int(rng.integers(len(cand)))]
        return cand[0]

    while unassigned:
        remaining = {}
        for c in classes:
            n = sum(hist.get(c, 0) for hist in unassigned.values())
            if n > 0:
                remaining[c] = n
        if not remaining:
            # leftover cells carry no class counts; spread onto smallest folds
            for key in sorted(unassigned):
                assign(key, pick_fold([-s for s in fold_plots]))
            break
        rarest = min(remaining, key=lambda c: (remaining[c], c))
        batch = sorted(
            (key for key, hist in unassigned.items() if hist.get(rarest, 0) > 0),
            key=lambda key: (-unassigned[key][rarest], key),
        )
        for key in batch:
            assign(key, pick_fold(desire[rarest]))
    return assignment


def build_partition(plots, cell_size_m: float, k: int, balance_tol: float = 0.1,
                    max_retries: int = 3, seed: int = 0) -> SpatialPartition:
    """Build the plot->fold partition, refining the grid until folds balance.

    `plots` is a PlotTable or any iterable of records with id, x, y and
    habitat attributes. Raises when fewer distinct cells than folds exist;
    when retries are exhausted the best (least unbalanced) partition is
    returned flagged `unbalanced=True`.
    """
    records = list(plots.records if hasattr(plots, "records") else plots)
    if len(records) < k:
        raise PartitionError(f"need at least {k} plots to form {k} folds")
    if cell_size_m <= 0:
        raise PartitionError("cell size must be positive")
    ids = tuple(r.id for r in records)
    xs = np.array([r.x for r in records])
    ys = np.array([r.y for r in records])
    labels = [r.habitat.code for r in records]

    best: SpatialPartition | None = None
    size = float(cell_size_m)
    for attempt in range(max_retries + 1):
        origin = grid_origin(xs, ys, size)
        keys = [cell_of(x, y, origin, size) for x, y in zip(xs, ys)]
        freq: dict[CellKey, dict[str, int]] = {}
        for key, lab in zip(keys, labels):
            hist = freq.setdefault(key, {})
            hist[lab] = hist.get(lab, 0) + 1
        if len(freq) < k:
            raise PartitionError(
                f"cannot form {k} spatial blocks: only {len(freq)} distinct cells "
                f"at cell size {size:g} m"
            )
        assignment = iterative_stratify(sorted(freq.items()), k, seed=seed)
        plot_folds = np.array([assignment[key] for key in keys], dtype=np.int64)
        sizes = np.bincount(plot_folds, minlength=k).astype(float)
        mean = sizes.mean()
        deviation = float(np.abs(sizes - mean).max() / mean) if mean > 0 else 0.0
        part = SpatialPartition(
            k=k, cell_size=size, origin=origin, assignment=assignment,
            plot_ids=ids, plot_cells=tuple(keys), plot_folds=plot_folds,
            class_freq=freq, deviation=deviation,
        )
        if deviation <= balance_tol:
            return part
        if best is None or deviation < best.deviation:
            best = part
        size /= 2.0
    assert best is not None
    best.unbalanced = True
    return best


def folds(partition: SpatialPartition) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """(train ids, test ids) per fold; test sets partition the plots."""
    out = []
    ids = np.asarray(partition.plot_ids, dtype=object)
    for f in range(partition.k):
        test = partition.plot_folds == f
        out.append((tuple(ids[~test]), tuple(ids[test])))
    return out


def write_blocks_csv(partition: SpatialPartition, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["plot_id", "cell_col", "cell_row", "fold"])
        for pid, key, fold in zip(partition.plot_ids, partition.plot_cells,
                                  partition.plot_folds):
            writer.writerow([pid, key.col, key.row, int(fold)])


def read_blocks_csv(path) -> dict[str, tuple[int, int, int]]:
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if head != ["plot_id", "cell_col", "cell_row", "fold"]:
            raise PartitionError(f"{path}: unexpected blocks header {head}")
        for row in reader:
            out[row[0]] = (int(row[1]), int(row[2]), int(row[3]))
    return out
