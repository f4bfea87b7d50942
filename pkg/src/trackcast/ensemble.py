"""Bagging, thresholded sequential boosting, and stacking over the
neural base learners.

Base learners are always networks; the combined prediction is either
the arithmetic mean of the members or a linear stack (weights + bias)
fit on validation data.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import WindowedDataset
from .errors import InvalidArgumentError, NumericDivergenceError
from .neural import NetworkConfig, NetworkParams, TrainTrace, predict_batch, train
from .rng import derive_seed

THREADS_ENV_VAR = "TRACKCAST_THREADS"

_COND_LIMIT = 1e12
_METHODS = ("bagging", "boosting")


@dataclass(frozen=True)
class Combiner:
    """How member predictions are merged: plain mean, or weights + bias.

    ``fallback_reason`` is set when a stacker fit degraded to the mean.
    """

    kind: str
    weights: tuple[float, ...] = ()
    bias: float = 0.0
    fallback_reason: str | None = None

    def __post_init__(self):
        if self.kind not in ("mean", "stacker"):
            raise InvalidArgumentError("combiner kind must be 'mean' or 'stacker'")
        if self.kind == "stacker" and len(self.weights) == 0:
            raise InvalidArgumentError("stacker combiner needs weights")


@dataclass(frozen=True)
class BoostTrace:
    """Selection record for sequential boosting: for each round, the
    train-set indices (into the original train set) that survived into
    the NEXT round's train set."""

    selected_indices: tuple[tuple[int, ...], ...]
    stopped_early: bool


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[NetworkParams, ...]
    combiner: Combiner
    method: str
    boost_threshold: float | None = None
    member_traces: tuple[TrainTrace, ...] = ()
    boost_trace: BoostTrace | None = None
    retried_members: tuple[int, ...] = ()

    def __post_init__(self):
        if self.method not in _METHODS:
            raise InvalidArgumentError(f"method must be one of {_METHODS}")
        if len(self.members) < 1:
            raise InvalidArgumentError("an ensemble needs at least one member")
        if self.combiner.kind == "stacker" and len(self.combiner.weights) != len(self.members):
            raise InvalidArgumentError("stacker weight count must equal member count")
        object.__setattr__(self, "members", tuple(self.members))


def thread_cap() -> int:
    """Worker-thread cap from the environment; 1 when unset."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise InvalidArgumentError(
            f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}"
        )
    return value


def bootstrap_sample(ds: WindowedDataset, n_prime: int, seed: int) -> WindowedDataset:
    """Uniform with-replacement resample of n_prime windows."""
    if ds.m == 0:
        raise InvalidArgumentError("cannot bootstrap an empty dataset")
    if int(n_prime) < 1:
        raise InvalidArgumentError("n_prime must be positive")
    rng = np.random.default_rng(int(seed))
    idx = rng.integers(0, ds.m, size=int(n_prime))
    return ds.subset(idx)


def _train_member(cfg: NetworkConfig, seed: int, train_ds, val_ds):
    member_cfg = NetworkConfig(
        arch=cfg.arch,
        hidden_size=cfg.hidden_size,
        kernel_count=cfg.kernel_count,
        kernel_width=cfg.kernel_width,
        l2_lambda=cfg.l2_lambda,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        learning_rate=cfg.learning_rate,
        seed=seed,
    )
    return train(member_cfg, train_ds, val_ds)


def _train_bagging_member(cfg, member_index, ds, val_ds):
    """One bagging member: bootstrap resample plus training, with a
    single retry on numeric divergence."""
    retried = False
    for attempt in (0, 1):
        seed = derive_seed(cfg.seed, member_index, attempt)
        sample = bootstrap_sample(ds, ds.m, derive_seed(seed, 0))
        try:
            params, trace = _train_member(cfg, seed, sample, val_ds)
            return params, trace, retried
        except NumericDivergenceError:
            if attempt == 1:
                raise
            retried = True
    raise AssertionError("unreachable")


def train_bagging(
    cfg: NetworkConfig,
    m: int,
    ds: WindowedDataset,
    val_ds: WindowedDataset,
    max_workers: int | None = None,
) -> EnsembleModel:
    """m independently seeded members on m bootstrap resamples, mean
    combined.  Members may train concurrently; results are ordered and
    deterministic either way."""
    if int(m) < 1:
        raise InvalidArgumentError("member count must be positive")
    m = int(m)
    workers = thread_cap() if max_workers is None else int(max_workers)
    if workers > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=min(workers, m)) as pool:
            futures = [
                pool.submit(_train_bagging_member, cfg, i, ds, val_ds)
                for i in range(m)
            ]
            results = [f.result() for f in futures]
    else:
        results = [_train_bagging_member(cfg, i, ds, val_ds) for i in range(m)]
    members = tuple(r[0] for r in results)
    traces = tuple(r[1] for r in results)
    retried = tuple(i for i, r in enumerate(results) if r[2])
    return EnsembleModel(
        members=members,
        combiner=Combiner(kind="mean"),
        method="bagging",
        member_traces=traces,
        retried_members=retried,
    )


def train_boosting(
    cfg: NetworkConfig,
    m: int,
    threshold: float,
    ds: WindowedDataset,
    val_ds: WindowedDataset,
    residual_scope: str = "original",
) -> EnsembleModel:
    """Sequential boosting: each round keeps only the samples the
    just-trained learner misses by more than ``threshold`` (strictly)
    as the next round's train set.

    ``residual_scope`` picks which pool the residual rule filters:
    "original" re-scores the full starting train set every round,
    "current" filters the shrinking per-round set.  Stops early when
    the next set is empty or smaller than one minibatch.
    """
    if int(m) < 1:
        raise InvalidArgumentError("member count must be positive")
    if not (float(threshold) > 0.0):
        raise InvalidArgumentError("threshold must be positive")
    if residual_scope not in ("original", "current"):
        raise InvalidArgumentError("residual_scope must be 'original' or 'current'")
    m = int(m)
    threshold = float(threshold)

    members: list[NetworkParams] = []
    traces: list[TrainTrace] = []
    selections: list[tuple[int, ...]] = []
    stopped_early = False
    current = ds
    # absolute positions (into ds) of the current round's samples
    current_idx = np.arange(ds.m)
    for round_no in range(m):
        params, trace = _train_member(cfg, derive_seed(cfg.seed, round_no), current, val_ds)
        members.append(params)
        traces.append(trace)
        if round_no == m - 1:
            break
        if residual_scope == "original":
            pool_ds, pool_idx = ds, np.arange(ds.m)
        else:
            pool_ds, pool_idx = current, current_idx
        resid = np.abs(pool_ds.targets - predict_batch(params, pool_ds.windows))
        keep = resid > threshold
        next_abs = pool_idx[keep]
        selections.append(tuple(int(k) for k in next_abs))
        if next_abs.shape[0] == 0 or next_abs.shape[0] < cfg.batch_size:
            stopped_early = True
            break
        current = ds.subset(next_abs)
        current_idx = next_abs
    return EnsembleModel(
        members=tuple(members),
        combiner=Combiner(kind="mean"),
        method="boosting",
        boost_threshold=threshold,
        member_traces=tuple(traces),
        boost_trace=BoostTrace(
            selected_indices=tuple(selections), stopped_early=stopped_early
        ),
    )


def member_predictions(members, windows: np.ndarray) -> np.ndarray:
    """Column j holds member j's predictions."""
    x = np.asarray(windows, dtype=np.float64)
    cols = [predict_batch(p, x) for p in members]
    return np.stack(cols, axis=1)


def _stacker_from_predictions(preds: np.ndarray, targets: np.ndarray) -> Combiner:
    """Least-squares combiner over member prediction columns.

    A numerically singular prediction matrix (e.g. identical members)
    falls back to the mean; a merely rank-deficient regression (columns
    independent but collinear with the intercept) takes the minimum-norm
    solution.
    """
    gram = preds.T @ preds
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        return Combiner(kind="mean", fallback_reason="singular member prediction matrix")
    design = np.concatenate([np.ones((preds.shape[0], 1)), preds], axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    return Combiner(
        kind="stacker",
        weights=tuple(float(w) for w in coef[1:]),
        bias=float(coef[0]),
    )


def fit_stacker(members, val_ds: WindowedDataset) -> Combiner:
    """Fit the linear stacking combiner on validation data."""
    if len(members) < 1:
        raise InvalidArgumentError("stacker needs at least one member")
    if val_ds.m == 0:
        raise InvalidArgumentError("stacker needs a non-empty validation set")
    preds = member_predictions(members, val_ds.windows)
    return _stacker_from_predictions(preds, np.asarray(val_ds.targets, dtype=np.float64))


def with_stacker(model: EnsembleModel, val_ds: WindowedDataset) -> EnsembleModel:
    """Same members, stacked combiner."""
    combiner = fit_stacker(model.members, val_ds)
    return EnsembleModel(
        members=model.members,
        combiner=combiner,
        method=model.method,
        boost_threshold=model.boost_threshold,
        member_traces=model.member_traces,
        boost_trace=model.boost_trace,
        retried_members=model.retried_members,
    )


def ensemble_predict_batch(model: EnsembleModel, windows: np.ndarray) -> np.ndarray:
    preds = member_predictions(model.members, windows)
    if model.combiner.kind == "mean":
        return preds.mean(axis=1)
    w = np.asarray(model.combiner.weights, dtype=np.float64)
    return preds @ w + model.combiner.bias


def ensemble_predict(model: EnsembleModel, window: np.ndarray) -> float:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise InvalidArgumentError("window must be 2-d")
    return float(ensemble_predict_batch(model, w[None, :, :])[0])
