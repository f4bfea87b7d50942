"""Shared data types and error metrics.

Tables hold raw rows straight from a CSV; windowed datasets hold the
fixed-length slices the forecasters consume.  Both are immutable after
construction (their arrays are marked read-only).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class RawTable:
    """A numeric table plus bookkeeping for identifier and target columns.

    ``id_columns`` holds the (mileage, meters) column indices in that
    order.  Identifier columns never participate in modeling; they mark
    where contiguous stretches of track begin and end.
    """

    column_names: tuple[str, ...]
    rows: np.ndarray
    id_columns: tuple[int, int]
    target_column: int

    def __post_init__(self):
        names = tuple(str(n) for n in self.column_names)
        object.__setattr__(self, "column_names", names)
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InvalidArgumentError("rows must be a 2-d array")
        if rows.shape[1] != len(names):
            raise InvalidArgumentError(
                f"rows have {rows.shape[1]} columns but {len(names)} names were given"
            )
        if len(set(names)) != len(names):
            raise InvalidArgumentError("column names must be unique")
        ids = tuple(int(i) for i in self.id_columns)
        if len(ids) != 2:
            raise InvalidArgumentError("id_columns must name exactly two columns")
        tgt = int(self.target_column)
        for idx in (*ids, tgt):
            if not 0 <= idx < len(names):
                raise InvalidArgumentError(f"column index {idx} out of range")
        if len({*ids, tgt}) != 3:
            raise InvalidArgumentError("id and target columns must be distinct")
        if rows.size and not np.isfinite(rows).all():
            raise InvalidArgumentError("table values must be finite")
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "id_columns", ids)
        object.__setattr__(self, "target_column", tgt)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_columns(self) -> int:
        return self.rows.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise InvalidArgumentError(f"no column named {name!r}") from None

    def column(self, index: int) -> np.ndarray:
        return self.rows[:, index]

    def non_id_indices(self) -> list[int]:
        """Indices of every modeling column (target included), table order."""
        return [i for i in range(self.n_columns) if i not in self.id_columns]

    def feature_indices(self) -> list[int]:
        """Indices of candidate feature columns: neither id nor target."""
        return [i for i in self.non_id_indices() if i != self.target_column]

    def without_columns(self, drop: Sequence[int]) -> "RawTable":
        """A new table with the given columns removed; ids and the target
        must survive, and their indices are remapped."""
        drop_set = {int(i) for i in drop}
        forbidden = {*self.id_columns, self.target_column}
        if drop_set & forbidden:
            raise InvalidArgumentError("cannot drop identifier or target columns")
        keep = [i for i in range(self.n_columns) if i not in drop_set]
        remap = {old: new for new, old in enumerate(keep)}
        return RawTable(
            column_names=tuple(self.column_names[i] for i in keep),
            rows=self.rows[:, keep],
            id_columns=(remap[self.id_columns[0]], remap[self.id_columns[1]]),
            target_column=remap[self.target_column],
        )

    def with_rows(self, rows: np.ndarray) -> "RawTable":
        return replace(self, rows=rows)


@dataclass(frozen=True)
class WindowedDataset:
    """Fixed-length windows and their one-step-ahead targets.

    ``windows`` has shape (m, l, n): m windows of l consecutive rows over
    n modeling features.  ``target_feature`` is the position of the
    forecast target within the feature axis, so forecasters can tell the
    endogenous channel from the exogenous ones.
    """

    windows: np.ndarray
    targets: np.ndarray
    l: int
    n: int
    target_feature: int = 0

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        l, n = int(self.l), int(self.n)
        if l < 2:
            raise InvalidArgumentError("window length l must be at least 2")
        if n < 1:
            raise InvalidArgumentError("feature count n must be at least 1")
        if w.ndim != 3 or w.shape[1:] != (l, n):
            raise InvalidArgumentError(f"windows must have shape (m, {l}, {n})")
        if t.ndim != 1 or t.shape[0] != w.shape[0]:
            raise InvalidArgumentError("targets must align one-to-one with windows")
        tf = int(self.target_feature)
        if not 0 <= tf < n:
            raise InvalidArgumentError("target_feature out of range")
        w = np.ascontiguousarray(w)
        t = np.ascontiguousarray(t)
        w.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "target_feature", tf)

    @property
    def m(self) -> int:
        return self.windows.shape[0]

    def subset(self, indices) -> "WindowedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return WindowedDataset(
            windows=self.windows[idx],
            targets=self.targets[idx],
            l=self.l,
            n=self.n,
            target_feature=self.target_feature,
        )


@dataclass(frozen=True)
class SplitSet:
    """Train/test/validation partition of a windowed dataset.

    ``fractions`` records the split rule that produced the parts.  Part
    sizes match the fractions at construction by the splitting routine;
    later train-side filtering may shrink the train part, so sizes are
    not re-validated here.
    """

    train: WindowedDataset
    test: WindowedDataset
    val: WindowedDataset
    fractions: tuple[float, float, float]

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3:
            raise InvalidArgumentError("fractions must be (train, test, val)")
        if any(f < 0.0 or f > 1.0 for f in fr):
            raise InvalidArgumentError("fractions must lie in [0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidArgumentError("fractions must sum to 1")
        parts = (self.train, self.test, self.val)
        dims = {(p.l, p.n) for p in parts}
        if len(dims) != 1:
            raise InvalidArgumentError("split parts must share window shape")
        object.__setattr__(self, "fractions", fr)

    @property
    def total(self) -> int:
        return self.train.m + self.test.m + self.val.m


@dataclass(frozen=True)
class MetricsPair:
    """Mean squared error and mean absolute error over one prediction set."""

    mse: float
    mae: float

    def __post_init__(self):
        mse, mae = float(self.mse), float(self.mae)
        if not (np.isfinite(mse) and np.isfinite(mae)):
            raise InvalidArgumentError("metrics must be finite")
        if mse < 0.0 or mae < 0.0:
            raise InvalidArgumentError("metrics must be non-negative")
        # Cauchy-Schwarz: mean|e| squared never exceeds mean e^2
        if mae * mae > mse * (1.0 + 1e-9) + 1e-15:
            raise InvalidArgumentError("mae^2 cannot exceed mse")
        object.__setattr__(self, "mse", mse)
        object.__setattr__(self, "mae", mae)


@dataclass(frozen=True)
class CorrelationReport:
    """Correlation of each candidate feature column with the target."""

    per_feature_r: Mapping[int, float]
    mean_abs_r: float
    warning: str | None = None

    def __post_init__(self):
        rs = {int(k): float(v) for k, v in dict(self.per_feature_r).items()}
        for k, v in rs.items():
            if not -1.0 <= v <= 1.0:
                raise InvalidArgumentError(f"correlation for column {k} outside [-1, 1]")
        mean = float(self.mean_abs_r)
        expect = sum(abs(v) for v in rs.values()) / len(rs) if rs else 0.0
        if abs(mean - expect) > 1e-9:
            raise InvalidArgumentError("mean_abs_r does not match per-feature values")
        object.__setattr__(self, "per_feature_r", rs)
        object.__setattr__(self, "mean_abs_r", mean)

    @classmethod
    def from_correlations(cls, rs: Mapping[int, float], warning: str | None = None):
        vals = {int(k): float(v) for k, v in rs.items()}
        mean = sum(abs(v) for v in vals.values()) / len(vals) if vals else 0.0
        return cls(per_feature_r=vals, mean_abs_r=mean, warning=warning)


def evaluate_metrics(y_true, y_pred) -> MetricsPair:
    """MSE and MAE of predictions against ground truth.

    Sums run sequentially in index order, so a fixed input order always
    reproduces the same bits.
    """
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.ndim != 1 or yp.ndim != 1:
        raise InvalidArgumentError("metric inputs must be 1-d")
    if yt.shape[0] != yp.shape[0]:
        raise InvalidArgumentError(
            f"length mismatch: {yt.shape[0]} true values vs {yp.shape[0]} predictions"
        )
    if yt.shape[0] == 0:
        raise InvalidArgumentError("metric inputs must be non-empty")
    if not (np.isfinite(yt).all() and np.isfinite(yp).all()):
        raise InvalidArgumentError("metric inputs must be finite")
    acc_sq = 0.0
    acc_abs = 0.0
    for a, b in zip(yt.tolist(), yp.tolist()):
        r = a - b
        acc_sq += r * r
        acc_abs += abs(r)
    n = yt.shape[0]
    return MetricsPair(mse=acc_sq / n, mae=acc_abs / n)


def pearson(x, y) -> float:
    """Pearson correlation coefficient; exactly 0.0 when either input
    has zero variance (a constant column carries no signal)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1 or xa.shape[0] != ya.shape[0]:
        raise InvalidArgumentError("pearson inputs must be 1-d of equal length")
    if xa.shape[0] < 2:
        raise InvalidArgumentError("pearson needs at least two points")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise InvalidArgumentError("pearson inputs must be finite")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    r = float(dx @ dy) / (np.sqrt(sx) * np.sqrt(sy))
    return float(min(1.0, max(-1.0, r)))
