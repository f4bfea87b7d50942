"""Cleansing, feature selection, scaling, windowing, splitting, filtering.

The pipeline order is fixed: constant-feature drop, z-score outlier
removal on the target, correlation-based feature selection, min-max
scaling, sliding windows, shuffled split, then optional proportional
filtering of the train part.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import CorrelationReport, RawTable, SplitSet, WindowedDataset, pearson
from .errors import InvalidArgumentError
from .ingest import METERS_STEP

# guard against representation error in floor(fraction * count); decimal
# fractions times realistic counts never sit within 1e-9 of an integer
# from below
_FLOOR_EPS = 1e-9


def _exact_floor(x: float) -> int:
    return int(math.floor(x + _FLOOR_EPS))


@dataclass(frozen=True)
class PreprocessConfig:
    """Pipeline settings; scaling is always to [0, 1]."""

    zscore_threshold: float = 4.0
    correlation_threshold: float | None = None  # None: drop |r| below the mean |r|
    scale_range: tuple[float, float] = (0.0, 1.0)
    window_width: int = 8
    split_fractions: tuple[float, float, float] = (0.85, 0.10, 0.05)
    shuffle_seed: int = 0

    def __post_init__(self):
        if float(self.zscore_threshold) <= 0.0:
            raise InvalidArgumentError("zscore_threshold must be positive")
        if self.correlation_threshold is not None and float(self.correlation_threshold) < 0.0:
            raise InvalidArgumentError("correlation_threshold must be non-negative")
        if tuple(float(v) for v in self.scale_range) != (0.0, 1.0):
            raise InvalidArgumentError("scale_range is fixed at (0.0, 1.0)")
        if int(self.window_width) < 2:
            raise InvalidArgumentError("window_width must be at least 2")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(f < 0.0 or f > 1.0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidArgumentError("split_fractions must be three shares summing to 1")
        object.__setattr__(self, "split_fractions", fr)


@dataclass(frozen=True)
class FilterConfig:
    """Proportional variance filter settings."""

    variance_threshold: float = 0.2
    discard_proportion: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(float(self.variance_threshold)):
            raise InvalidArgumentError("variance_threshold must be finite")
        p = float(self.discard_proportion)
        if not 0.0 <= p <= 1.0:
            raise InvalidArgumentError("discard_proportion must lie in [0, 1]")


@dataclass(frozen=True)
class ScalingParams:
    """Per-column (min, max) observed on the fit table."""

    columns: tuple[int, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        cols = tuple(int(c) for c in self.columns)
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != (len(cols),) or maxs.shape != (len(cols),):
            raise InvalidArgumentError("mins/maxs must align with columns")
        if np.any(maxs < mins):
            raise InvalidArgumentError("max below min in scaling parameters")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)


def drop_constant_features(table: RawTable) -> tuple[RawTable, list[int]]:
    """Remove candidate feature columns with a single unique value.

    Identifier and target columns are never dropped.  Returns the new
    table and the dropped column indices relative to the input table.
    """
    dropped = []
    for idx in table.feature_indices():
        col = table.column(idx)
        if col.shape[0] == 0 or np.all(col == col[0]):
            dropped.append(idx)
    if not dropped:
        return table, []
    return table.without_columns(dropped), dropped


def remove_outliers_zscore(table: RawTable, threshold: float) -> tuple[RawTable, np.ndarray]:
    """Drop rows whose target z-score magnitude exceeds ``threshold``.

    Mean and standard deviation come from the table once (single pass,
    no re-iteration), with the sample convention (ddof=1) for sigma.
    A zero-variance target leaves the table unchanged.
    """
    if float(threshold) <= 0.0:
        raise InvalidArgumentError("z-score threshold must be positive")
    if table.n_rows < 2:
        raise InvalidArgumentError("outlier removal needs at least two rows")
    target = table.column(table.target_column)
    mu = float(target.mean())
    sigma = float(target.std(ddof=1))
    if sigma == 0.0:
        return table, np.empty(0, dtype=np.int64)
    z = (target - mu) / sigma
    removed = np.flatnonzero(np.abs(z) > float(threshold))
    if removed.size == 0:
        return table, removed
    keep = np.setdiff1d(np.arange(table.n_rows), removed, assume_unique=True)
    return table.with_rows(table.rows[keep]), removed


def select_features(
    table: RawTable, threshold: float | None = None
) -> tuple[RawTable, CorrelationReport]:
    """Keep feature columns that correlate with the target strongly enough.

    With no explicit threshold, columns whose |r| falls strictly below
    the mean |r| over all candidates are dropped; ties survive.  The
    identifier and target columns always survive.  A constant target
    makes every correlation zero, in which case everything is kept and
    the report carries a warning.
    """
    candidates = table.feature_indices()
    target = table.column(table.target_column)
    rs = {idx: pearson(target, table.column(idx)) for idx in candidates}
    warning = None
    target_constant = table.n_rows > 0 and bool(np.all(target == target[0]))
    if target_constant and candidates:
        warning = "target column is constant; correlations are all zero"
    report = CorrelationReport.from_correlations(rs, warning=warning)
    cut = report.mean_abs_r if threshold is None else float(threshold)
    dropped = [idx for idx in candidates if abs(rs[idx]) < cut]
    if not dropped:
        return table, report
    return table.without_columns(dropped), report


def fit_scaler(table: RawTable) -> ScalingParams:
    """Observe per-column min/max on every modeling column (target included)."""
    if table.n_rows < 1:
        raise InvalidArgumentError("cannot fit a scaler on an empty table")
    cols = table.non_id_indices()
    mins = np.array([table.column(c).min() for c in cols])
    maxs = np.array([table.column(c).max() for c in cols])
    return ScalingParams(columns=tuple(cols), mins=mins, maxs=maxs)


def apply_scaler(table: RawTable, params: ScalingParams) -> RawTable:
    """Map each scaled column through (x - min) / (max - min).

    Applied to its own fit table every value lands in [0, 1]; unseen
    data may fall outside, which is allowed.  A constant column
    (max == min) maps to 0.
    """
    rows = np.array(table.rows)
    for col, lo, hi in zip(params.columns, params.mins, params.maxs):
        if not 0 <= col < table.n_columns:
            raise InvalidArgumentError(f"scaler column {col} not present in table")
        span = hi - lo
        if span == 0.0:
            rows[:, col] = 0.0
        else:
            rows[:, col] = (rows[:, col] - lo) / span
    return table.with_rows(rows)


def _run_bounds(table: RawTable) -> list[tuple[int, int]]:
    """Maximal contiguous stretches: same mileage, meters advancing by
    exactly one 0.25 m sampling step.  Removed rows break a stretch."""
    m = table.n_rows
    if m == 0:
        return []
    mil = table.column(table.id_columns[0])
    met = table.column(table.id_columns[1])
    breaks = np.flatnonzero(
        (mil[1:] != mil[:-1]) | (met[1:] - met[:-1] != METERS_STEP)
    )
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [m]))
    return list(zip(starts.tolist(), ends.tolist()))


def make_windows(table: RawTable, l: int) -> WindowedDataset:
    """Cut sliding windows of ``l`` rows with the next row's target value.

    A contiguous run of R rows yields R - l windows; windows never
    straddle run boundaries (mileage changes or gaps left by removed
    rows).  Window features are every modeling column in table order,
    past target values included.
    """
    l = int(l)
    if l < 2:
        raise InvalidArgumentError("window length must be at least 2")
    feat_cols = table.non_id_indices()
    feats = table.rows[:, feat_cols]
    target = table.column(table.target_column)
    tf = feat_cols.index(table.target_column)
    chunks = []
    target_chunks = []
    for start, end in _run_bounds(table):
        run_len = end - start
        if run_len <= l:
            continue
        view = sliding_window_view(feats[start:end], l, axis=0)  # (R-l+1, n, l)
        chunks.append(np.moveaxis(view[: run_len - l], 2, 1))
        target_chunks.append(target[start + l : end])
    if chunks:
        windows = np.concatenate(chunks, axis=0)
        targets = np.concatenate(target_chunks)
    else:
        windows = np.empty((0, l, len(feat_cols)))
        targets = np.empty(0)
    return WindowedDataset(
        windows=windows, targets=targets, l=l, n=len(feat_cols), target_feature=tf
    )


def shuffle_split(ds: WindowedDataset, fractions, seed: int) -> SplitSet:
    """Shuffle deterministically, then slice train/test/val.

    Train and test sizes round down; validation takes the remainder.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0.0 or f > 1.0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise InvalidArgumentError("fractions must be three shares summing to 1")
    m = ds.m
    if m < 3:
        raise InvalidArgumentError("need at least 3 windows to split")
    perm = np.random.default_rng(int(seed)).permutation(m)
    n_train = _exact_floor(fr[0] * m)
    n_test = _exact_floor(fr[1] * m)
    return SplitSet(
        train=ds.subset(perm[:n_train]),
        test=ds.subset(perm[n_train : n_train + n_test]),
        val=ds.subset(perm[n_train + n_test :]),
        fractions=fr,
    )


def proportional_filter(
    ds: WindowedDataset, cfg: FilterConfig, target_feature_index: int
) -> tuple[WindowedDataset, int]:
    """Discard a share of the low-variance windows.

    Candidates are windows whose past-target variance (population
    convention, over the l in-window values) falls strictly below the
    threshold; exactly floor(proportion * candidate_count) of them go,
    chosen uniformly by the seed.  Windows at or above the threshold
    always survive.
    """
    tf = int(target_feature_index)
    if not 0 <= tf < ds.n:
        raise InvalidArgumentError("target feature index out of range")
    variances = ds.windows[:, :, tf].var(axis=1)
    candidates = np.flatnonzero(variances < float(cfg.variance_threshold))
    k = _exact_floor(float(cfg.discard_proportion) * candidates.size)
    if k == 0:
        return ds, 0
    chosen = np.random.default_rng(int(cfg.seed)).choice(candidates, size=k, replace=False)
    keep = np.ones(ds.m, dtype=bool)
    keep[chosen] = False
    return ds.subset(np.flatnonzero(keep)), k


def variance_histogram(ds: WindowedDataset, bin_edges) -> np.ndarray:
    """Counts of per-window past-target variances per bin.

    Values outside the edges are clipped into the boundary bins, so the
    counts always total m.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.shape[0] < 2:
        raise InvalidArgumentError("need at least two bin edges")
    if np.any(np.diff(edges) <= 0.0):
        raise InvalidArgumentError("bin edges must be strictly increasing")
    variances = ds.windows[:, :, ds.target_feature].var(axis=1)
    counts, _ = np.histogram(np.clip(variances, edges[0], edges[-1]), bins=edges)
    return counts


@dataclass(frozen=True)
class PreprocessAudit:
    """What the pipeline did, for the run report."""

    dropped_constant_columns: tuple[str, ...]
    outlier_rows_removed: int
    sigma_convention: str
    correlation: CorrelationReport
    correlation_by_name: dict[str, float]
    selected_features: tuple[str, ...]
    dropped_features: tuple[str, ...]
    scaler_columns: dict[str, tuple[float, float]]
    window_width: int
    windows_total: int
    split_sizes: tuple[int, int, int]
    filter_threshold: float | None = None
    filter_proportion: float | None = None
    filter_candidates: int | None = None
    filter_discarded: int | None = None

    def as_dict(self) -> dict:
        return {
            "dropped_constant_columns": list(self.dropped_constant_columns),
            "outlier_rows_removed": self.outlier_rows_removed,
            "sigma_convention": self.sigma_convention,
            "correlation": {
                "per_feature_r": dict(sorted(self.correlation_by_name.items())),
                "mean_abs_r": self.correlation.mean_abs_r,
                "warning": self.correlation.warning,
            },
            "selected_features": list(self.selected_features),
            "dropped_features": list(self.dropped_features),
            "scaler": {k: list(v) for k, v in sorted(self.scaler_columns.items())},
            "window_width": self.window_width,
            "windows_total": self.windows_total,
            "split_sizes": {
                "train": self.split_sizes[0],
                "test": self.split_sizes[1],
                "val": self.split_sizes[2],
            },
            "filter": None
            if self.filter_threshold is None
            else {
                "variance_threshold": self.filter_threshold,
                "discard_proportion": self.filter_proportion,
                "candidates": self.filter_candidates,
                "discarded": self.filter_discarded,
            },
        }


def run_preprocess(
    table: RawTable,
    cfg: PreprocessConfig,
    filter_cfg: FilterConfig | None = None,
) -> tuple[SplitSet, PreprocessAudit]:
    """Run the full pipeline in its fixed order.

    The proportional filter, when configured, applies to the train part
    only; test and validation windows stay untouched.
    """
    stage1, const_dropped = drop_constant_features(table)
    const_names = tuple(table.column_names[i] for i in const_dropped)

    stage2, removed_rows = remove_outliers_zscore(stage1, cfg.zscore_threshold)

    stage3, corr_report = select_features(stage2, cfg.correlation_threshold)
    corr_by_name = {
        stage2.column_names[idx]: r for idx, r in corr_report.per_feature_r.items()
    }
    kept_names = set(stage3.column_names)
    selected = tuple(
        stage2.column_names[idx]
        for idx in stage2.feature_indices()
        if stage2.column_names[idx] in kept_names
    )
    dropped_feats = tuple(
        stage2.column_names[idx]
        for idx in stage2.feature_indices()
        if stage2.column_names[idx] not in kept_names
    )

    scaler = fit_scaler(stage3)
    scaled = apply_scaler(stage3, scaler)
    scaler_cols = {
        stage3.column_names[c]: (float(lo), float(hi))
        for c, lo, hi in zip(scaler.columns, scaler.mins, scaler.maxs)
    }

    ds = make_windows(scaled, cfg.window_width)
    split = shuffle_split(ds, cfg.split_fractions, cfg.shuffle_seed)

    f_threshold = f_proportion = None
    f_candidates = f_discarded = None
    if filter_cfg is not None:
        variances = split.train.windows[:, :, split.train.target_feature].var(axis=1)
        f_candidates = int(
            np.count_nonzero(variances < float(filter_cfg.variance_threshold))
        )
        filtered, f_discarded = proportional_filter(
            split.train, filter_cfg, split.train.target_feature
        )
        split = replace(split, train=filtered)
        f_threshold = float(filter_cfg.variance_threshold)
        f_proportion = float(filter_cfg.discard_proportion)

    audit = PreprocessAudit(
        dropped_constant_columns=const_names,
        outlier_rows_removed=int(removed_rows.size),
        sigma_convention="sample",
        correlation=corr_report,
        correlation_by_name=corr_by_name,
        selected_features=selected,
        dropped_features=dropped_feats,
        scaler_columns=scaler_cols,
        window_width=int(cfg.window_width),
        windows_total=ds.m,
        split_sizes=(split.train.m, split.test.m, split.val.m),
        filter_threshold=f_threshold,
        filter_proportion=f_proportion,
        filter_candidates=f_candidates,
        filter_discarded=f_discarded,
    )
    return split, audit
