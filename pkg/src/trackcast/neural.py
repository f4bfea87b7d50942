"""From-scratch neural one-step forecasters on numpy.

Three architectures share one training loop: a single-layer LSTM, a
single-layer GRU (update and reset gates, no output gate, so fewer
parameters than the LSTM), and a one-dimensional convolutional net
whose kernels slide along the time axis.  Each feeds a one-neuron
dense head.  Gradients are written by hand and verified against
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import WindowedDataset
from .errors import InvalidArgumentError, NumericDivergenceError
from .rng import derive_seed

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_ARCHS = ("lstm", "gru", "cnn")

_LSTM_GATES = ("i", "f", "o", "g")
_GRU_GATES = ("z", "r", "h")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and training settings for one network."""

    arch: str
    hidden_size: int = 32
    kernel_count: int = 5
    kernel_width: int = 5
    l2_lambda: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 3
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.arch not in _ARCHS:
            raise InvalidArgumentError(f"arch must be one of {_ARCHS}")
        for name in ("hidden_size", "kernel_count", "kernel_width", "batch_size",
                     "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if float(self.learning_rate) <= 0.0:
            raise InvalidArgumentError("learning_rate must be positive")
        if float(self.l2_lambda) < 0.0:
            raise InvalidArgumentError("l2_lambda must be non-negative")


@dataclass(frozen=True)
class NetworkParams:
    """Named parameter tensors for one network instance.

    Tensors are read-only; updates build a new instance, which makes
    best-epoch snapshots free.
    """

    arch: str
    n_features: int
    window_len: int
    hidden_size: int
    kernel_count: int
    kernel_width: int
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "tensors", frozen)

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "NetworkParams":
        return replace(self, tensors=tensors)

    def parameter_count(self) -> int:
        return sum(a.size for a in self.tensors.values())


def regularized_tensor_names(arch: str) -> tuple[str, ...]:
    """Input-layer weight tensors carrying the L2 penalty.

    Biases and the dense head are never penalized.
    """
    if arch == "lstm":
        return tuple(f"{w}{g}" for g in _LSTM_GATES for w in ("W", "U"))
    if arch == "gru":
        return tuple(f"{w}{g}" for g in _GRU_GATES for w in ("W", "U"))
    if arch == "cnn":
        return ("kernels",)
    raise InvalidArgumentError(f"unknown arch {arch!r}")


def init_params(cfg: NetworkConfig, n_features: int, window_len: int) -> NetworkParams:
    """Seeded initialization: weights uniform on [-s, s] with
    s = 1/sqrt(fan_in); biases zero except the LSTM forget gate at 1.
    Draw order over tensors is fixed, so a seed pins every value."""
    n = int(n_features)
    l = int(window_len)
    if n < 1:
        raise InvalidArgumentError("n_features must be positive")
    if l < 2:
        raise InvalidArgumentError("window_len must be at least 2")
    rng = np.random.default_rng(int(cfg.seed))
    tensors: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    if cfg.arch in ("lstm", "gru"):
        hidden = int(cfg.hidden_size)
        gates = _LSTM_GATES if cfg.arch == "lstm" else _GRU_GATES
        fan = n + hidden
        for g in gates:
            tensors[f"W{g}"] = uniform((hidden, n), fan)
            tensors[f"U{g}"] = uniform((hidden, hidden), fan)
            tensors[f"b{g}"] = np.full(hidden, 1.0) if (cfg.arch == "lstm" and g == "f") else np.zeros(hidden)
        tensors["head_w"] = uniform(hidden, hidden)
        tensors["head_b"] = np.zeros(1)
        return NetworkParams(
            arch=cfg.arch, n_features=n, window_len=l, hidden_size=hidden,
            kernel_count=0, kernel_width=0, tensors=tensors,
        )

    count = int(cfg.kernel_count)
    width = int(cfg.kernel_width)
    if width >= l:
        raise InvalidArgumentError(
            f"kernel_width {width} must be smaller than window length {l}"
        )
    tensors["kernels"] = uniform((count, width, n), width * n)
    tensors["conv_b"] = np.zeros(count)
    head_in = count * (l - width + 1)
    tensors["head_w"] = uniform(head_in, head_in)
    tensors["head_b"] = np.zeros(1)
    return NetworkParams(
        arch="cnn", n_features=n, window_len=l, hidden_size=0,
        kernel_count=count, kernel_width=width, tensors=tensors,
    )


def _check_batch(params: NetworkParams, x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1] != params.window_len or x.shape[2] != params.n_features:
        raise InvalidArgumentError(
            f"windows must have shape (batch, {params.window_len}, {params.n_features})"
        )


def _lstm_forward(params, x, need_cache):
    t = params.tensors
    batch, l, _ = x.shape
    hidden = params.hidden_size
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    cache = [] if need_cache else None
    for step in range(l):
        xs = x[:, step, :]
        i = expit(xs @ t["Wi"].T + h @ t["Ui"].T + t["bi"])
        f = expit(xs @ t["Wf"].T + h @ t["Uf"].T + t["bf"])
        o = expit(xs @ t["Wo"].T + h @ t["Uo"].T + t["bo"])
        g = np.tanh(xs @ t["Wg"].T + h @ t["Ug"].T + t["bg"])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if need_cache:
            cache.append((xs, h, c, i, f, o, g, tc))
        h, c = h_new, c_new
    preds = h @ t["head_w"] + t["head_b"][0]
    return preds, (h, cache)


def _lstm_backward(params, aux, dpred):
    t = params.tensors
    h_last, cache = aux
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    grads["head_w"] = h_last.T @ dpred
    grads["head_b"] = np.array([dpred.sum()])
    dh = dpred[:, None] * t["head_w"][None, :]
    dc = np.zeros_like(dh)
    for step in range(len(cache) - 1, -1, -1):
        xs, h_prev, c_prev, i, f, o, g, tc = cache[step]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dai = di * i * (1.0 - i)
        daf = df * f * (1.0 - f)
        dao = do * o * (1.0 - o)
        dag = dg * (1.0 - g * g)
        for name, da in (("i", dai), ("f", daf), ("o", dao), ("g", dag)):
            grads[f"W{name}"] += da.T @ xs
            grads[f"U{name}"] += da.T @ h_prev
            grads[f"b{name}"] += da.sum(axis=0)
        dh = dai @ t["Ui"] + daf @ t["Uf"] + dao @ t["Uo"] + dag @ t["Ug"]
        dc = dc * f
    return grads


def _gru_forward(params, x, need_cache):
    t = params.tensors
    batch, l, _ = x.shape
    h = np.zeros((batch, params.hidden_size))
    cache = [] if need_cache else None
    for step in range(l):
        xs = x[:, step, :]
        z = expit(xs @ t["Wz"].T + h @ t["Uz"].T + t["bz"])
        r = expit(xs @ t["Wr"].T + h @ t["Ur"].T + t["br"])
        hh = np.tanh(xs @ t["Wh"].T + (r * h) @ t["Uh"].T + t["bh"])
        h_new = (1.0 - z) * h + z * hh
        if need_cache:
            cache.append((xs, h, z, r, hh))
        h = h_new
    preds = h @ t["head_w"] + t["head_b"][0]
    return preds, (h, cache)


def _gru_backward(params, aux, dpred):
    t = params.tensors
    h_last, cache = aux
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    grads["head_w"] = h_last.T @ dpred
    grads["head_b"] = np.array([dpred.sum()])
    dh = dpred[:, None] * t["head_w"][None, :]
    for step in range(len(cache) - 1, -1, -1):
        xs, h_prev, z, r, hh = cache[step]
        dz = dh * (hh - h_prev)
        dhh = dh * z
        dh_prev = dh * (1.0 - z)
        dah = dhh * (1.0 - hh * hh)
        grads["Wh"] += dah.T @ xs
        grads["Uh"] += dah.T @ (r * h_prev)
        grads["bh"] += dah.sum(axis=0)
        drh = dah @ t["Uh"]
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        grads["Wz"] += daz.T @ xs
        grads["Uz"] += daz.T @ h_prev
        grads["bz"] += daz.sum(axis=0)
        grads["Wr"] += dar.T @ xs
        grads["Ur"] += dar.T @ h_prev
        grads["br"] += dar.sum(axis=0)
        dh = dh_prev + daz @ t["Uz"] + dar @ t["Ur"]
    return grads


def _cnn_forward(params, x, need_cache):
    t = params.tensors
    batch = x.shape[0]
    # (batch, steps, n, width): all length-`width` stretches along time
    xcol = sliding_window_view(x, params.kernel_width, axis=1)
    pre = np.einsum("caj,btja->bct", t["kernels"], xcol) + t["conv_b"][None, :, None]
    act = np.maximum(pre, 0.0)
    flat = act.reshape(batch, -1)
    preds = flat @ t["head_w"] + t["head_b"][0]
    cache = (xcol, pre, flat) if need_cache else None
    return preds, cache


def _cnn_backward(params, aux, dpred):
    t = params.tensors
    xcol, pre, flat = aux
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    grads["head_w"] = flat.T @ dpred
    grads["head_b"] = np.array([dpred.sum()])
    dflat = dpred[:, None] * t["head_w"][None, :]
    dpre = dflat.reshape(pre.shape) * (pre > 0.0)
    grads["conv_b"] = dpre.sum(axis=(0, 2))
    grads["kernels"] = np.einsum("bct,btja->caj", dpre, xcol)
    return grads


_FORWARD = {"lstm": _lstm_forward, "gru": _gru_forward, "cnn": _cnn_forward}
_BACKWARD = {"lstm": _lstm_backward, "gru": _gru_backward, "cnn": _cnn_backward}


def forward(params: NetworkParams, window: np.ndarray) -> float:
    """Single-window prediction."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise InvalidArgumentError("window must be 2-d")
    return float(predict_batch(params, w[None, :, :])[0])


predict = forward


def predict_batch(params: NetworkParams, windows: np.ndarray) -> np.ndarray:
    """Predictions for a stack of windows; equals per-window prediction
    elementwise."""
    x = np.asarray(windows, dtype=np.float64)
    _check_batch(params, x)
    if x.shape[0] == 0:
        return np.empty(0)
    preds, _ = _FORWARD[params.arch](params, x, need_cache=False)
    return preds


def _penalty(params: NetworkParams, l2_lambda: float) -> float:
    if l2_lambda == 0.0:
        return 0.0
    total = 0.0
    for name in regularized_tensor_names(params.arch):
        w = params.tensors[name]
        total += float((w * w).sum())
    return l2_lambda * total


def _loss_only(params, x, y, l2_lambda) -> float:
    preds, _ = _FORWARD[params.arch](params, x, need_cache=False)
    resid = preds - y
    return float(np.mean(resid * resid)) + _penalty(params, l2_lambda)


def loss_and_grads(params: NetworkParams, windows, targets, l2_lambda: float):
    """Batch mean squared error plus the input-layer L2 penalty, with
    gradients for every tensor."""
    x = np.asarray(windows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    _check_batch(params, x)
    if x.shape[0] == 0 or y.shape != (x.shape[0],):
        raise InvalidArgumentError("targets must align with a non-empty batch")
    preds, aux = _FORWARD[params.arch](params, x, need_cache=True)
    resid = preds - y
    loss = float(np.mean(resid * resid)) + _penalty(params, float(l2_lambda))
    if not np.isfinite(loss):
        raise NumericDivergenceError("non-finite training loss")
    dpred = 2.0 * resid / x.shape[0]
    grads = _BACKWARD[params.arch](params, aux, dpred)
    lam = float(l2_lambda)
    if lam != 0.0:
        for name in regularized_tensor_names(params.arch):
            grads[name] = grads[name] + 2.0 * lam * params.tensors[name]
    return loss, grads


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int

    @classmethod
    def initialize(cls, params: NetworkParams) -> "AdamState":
        zeros = lambda: {k: np.zeros_like(a) for k, a in params.tensors.items()}
        return cls(m=zeros(), v=zeros(), t=0)


def adam_step(params: NetworkParams, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new params and state."""
    if set(grads) != set(params.tensors):
        raise InvalidArgumentError("gradient names must match parameter names")
    t_new = state.t + 1
    c1 = 1.0 - _ADAM_BETA1 ** t_new
    c2 = 1.0 - _ADAM_BETA2 ** t_new
    new_tensors = {}
    new_m = {}
    new_v = {}
    for name, arr in params.tensors.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != arr.shape:
            raise InvalidArgumentError(f"gradient shape mismatch for {name}")
        m = _ADAM_BETA1 * state.m[name] + (1.0 - _ADAM_BETA1) * g
        v = _ADAM_BETA2 * state.v[name] + (1.0 - _ADAM_BETA2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + _ADAM_EPS)
        new_tensors[name] = arr - update
        new_m[name] = m
        new_v[name] = v
    return params.with_tensors(new_tensors), AdamState(m=new_m, v=new_v, t=t_new)


@dataclass(frozen=True)
class TrainTrace:
    """Per-epoch record: end-of-epoch full-train MSE, validation MSE,
    where training stopped, and which epoch's weights were returned."""

    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    stopped_epoch: int
    best_epoch: int
    restored: bool


class EarlyStopper:
    """Stop once validation loss has risen ``patience`` epochs in a row.

    A rise means strictly greater than the previous epoch's value.  The
    best (lowest) epoch is tracked so its weights can be restored.
    """

    def __init__(self, patience: int):
        if int(patience) < 1:
            raise InvalidArgumentError("patience must be positive")
        self.patience = int(patience)
        self.best_value = np.inf
        self.best_epoch = 0
        self.epochs_seen = 0
        self._previous = None
        self._streak = 0

    def update(self, value: float) -> tuple[bool, bool]:
        """Record one epoch's validation loss.

        Returns (improved, stop): whether this is a new best, and
        whether training should stop now.
        """
        value = float(value)
        self.epochs_seen += 1
        improved = value < self.best_value
        if improved:
            self.best_value = value
            self.best_epoch = self.epochs_seen
        if self._previous is not None and value > self._previous:
            self._streak += 1
        else:
            self._streak = 0
        self._previous = value
        return improved, self._streak >= self.patience


def dataset_mse(params: NetworkParams, ds: WindowedDataset, chunk: int = 4096) -> float:
    """Plain MSE of the network over a windowed dataset."""
    if ds.m == 0:
        raise InvalidArgumentError("cannot evaluate on an empty dataset")
    total = 0.0
    for start in range(0, ds.m, chunk):
        preds = predict_batch(params, ds.windows[start : start + chunk])
        resid = preds - ds.targets[start : start + chunk]
        total += float(resid @ resid)
    return total / ds.m


def train(cfg: NetworkConfig, train_ds: WindowedDataset, val_ds: WindowedDataset):
    """Minibatch Adam with seeded shuffling and early stopping.

    Returns (params, trace); the returned parameters are the snapshot
    with the lowest recorded validation loss.  A non-finite loss raises
    a divergence error carrying the partial trace.
    """
    if train_ds.m == 0 or val_ds.m == 0:
        raise InvalidArgumentError("train and validation sets must be non-empty")
    if (train_ds.l, train_ds.n) != (val_ds.l, val_ds.n):
        raise InvalidArgumentError("train and validation window shapes must match")
    params = init_params(cfg, train_ds.n, train_ds.l)
    state = AdamState.initialize(params)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    stopper = EarlyStopper(cfg.patience)
    best_params = params
    train_losses: list[float] = []
    val_losses: list[float] = []

    def partial_trace() -> TrainTrace:
        epochs = len(val_losses)
        return TrainTrace(
            train_losses=tuple(train_losses),
            val_losses=tuple(val_losses),
            stopped_epoch=epochs,
            best_epoch=stopper.best_epoch,
            restored=False,
        )

    for _epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(train_ds.m)
        for start in range(0, train_ds.m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            try:
                _, grads = loss_and_grads(
                    params,
                    train_ds.windows[idx],
                    train_ds.targets[idx],
                    cfg.l2_lambda,
                )
            except NumericDivergenceError as exc:
                raise NumericDivergenceError(str(exc), trace=partial_trace()) from None
            params, state = adam_step(params, grads, state, cfg.learning_rate)
        train_mse = dataset_mse(params, train_ds)
        val_mse = dataset_mse(params, val_ds)
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise NumericDivergenceError(
                "non-finite epoch loss", trace=partial_trace()
            )
        train_losses.append(train_mse)
        val_losses.append(val_mse)
        improved, stop = stopper.update(val_mse)
        if improved:
            best_params = params
        if stop:
            break

    stopped_epoch = len(val_losses)
    restored = stopper.best_epoch < stopped_epoch
    final = best_params if restored else params
    trace = TrainTrace(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        stopped_epoch=stopped_epoch,
        best_epoch=stopper.best_epoch,
        restored=restored,
    )
    return final, trace


def grad_check(cfg: NetworkConfig, windows, targets, step: float = 1e-5) -> float:
    """Largest relative disagreement between analytic gradients and
    central finite differences over every parameter coordinate."""
    x = np.asarray(windows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    params = init_params(cfg, x.shape[2], x.shape[1])
    _, grads = loss_and_grads(params, x, y, cfg.l2_lambda)
    worst = 0.0
    for name, arr in params.tensors.items():
        flat = arr.ravel()
        for k in range(flat.shape[0]):
            for sign in (1.0, -1.0):
                bumped = arr.copy()
                bumped.ravel()[k] += sign * step
                probe = params.with_tensors({**params.tensors, name: bumped})
                value = _loss_only(probe, x, y, cfg.l2_lambda)
                if sign > 0:
                    up = value
                else:
                    down = value
            numeric = (up - down) / (2.0 * step)
            analytic = float(grads[name].ravel()[k])
            denom = max(abs(analytic) + abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
