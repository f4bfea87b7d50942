"""Model artifacts and run reports.

Artifacts are a small binary container: magic, format version, a JSON
manifest, then the parameter arrays as raw little-endian float64, in
manifest order.  Raw binary (not text) so that load(save(m)) gives
bit-identical predictions.  Reports are UTF-8 JSON with sorted keys;
all wall-clock numbers live under the single "timings" key so two runs
of the same config differ only there.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .ensemble import BoostTrace, Combiner, EnsembleModel
from .errors import IntegrityError, InvalidArgumentError, UnsupportedVersionError
from .linear import ArimaxModel, LinearModel
from .neural import NetworkParams, TrainTrace

MAGIC = b"TCKM"
FORMAT_VERSION = 1

_METRIC_KEYS = ("mse", "mae")


def _le64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64)).astype("<f8", copy=False)


def _scalar(a: np.ndarray) -> float:
    # scalars are stored as length-1 arrays
    return float(np.asarray(a).ravel()[0])


def _network_manifest(params: NetworkParams, prefix: str = ""):
    meta = {
        "arch": params.arch,
        "n_features": params.n_features,
        "window_len": params.window_len,
        "hidden_size": params.hidden_size,
        "kernel_count": params.kernel_count,
        "kernel_width": params.kernel_width,
        "tensor_order": list(params.tensors.keys()),
    }
    arrays = [(prefix + name, arr) for name, arr in params.tensors.items()]
    return meta, arrays


def _network_from_manifest(meta, lookup, prefix: str = "") -> NetworkParams:
    tensors = {name: lookup[prefix + name] for name in meta["tensor_order"]}
    return NetworkParams(
        arch=meta["arch"],
        n_features=int(meta["n_features"]),
        window_len=int(meta["window_len"]),
        hidden_size=int(meta["hidden_size"]),
        kernel_count=int(meta["kernel_count"]),
        kernel_width=int(meta["kernel_width"]),
        tensors=tensors,
    )


def _manifest_for(model):
    """(model_kind, meta, named arrays) for any savable model."""
    if isinstance(model, LinearModel):
        meta = {
            "target_feature": model.target_feature,
            "n_features": model.n_features,
            "ridge_fallback": bool(model.ridge_fallback),
        }
        arrays = [("weights", model.weights), ("bias", np.asarray(model.bias))]
        return "linear", meta, arrays
    if isinstance(model, ArimaxModel):
        meta = {
            "p": model.p,
            "d": model.d,
            "q": model.q,
            "target_feature": model.target_feature,
            "n_features": model.n_features,
            "css_initial": model.css_initial,
            "css_final": model.css_final,
            "css_warning": bool(model.css_warning),
        }
        arrays = [
            ("c", np.asarray(model.c)),
            ("phi", model.phi),
            ("theta", model.theta),
            ("beta", model.beta),
        ]
        return "arimax", meta, arrays
    if isinstance(model, NetworkParams):
        meta, arrays = _network_manifest(model)
        return "network", meta, arrays
    if isinstance(model, EnsembleModel):
        members = []
        arrays = []
        for i, member in enumerate(model.members):
            m_meta, m_arrays = _network_manifest(member, prefix=f"member{i}/")
            members.append(m_meta)
            arrays.extend(m_arrays)
        meta = {
            "method": model.method,
            "boost_threshold": model.boost_threshold,
            "members": members,
            "combiner": {
                "kind": model.combiner.kind,
                "fallback_reason": model.combiner.fallback_reason,
            },
        }
        if model.combiner.kind == "stacker":
            arrays.append(("stacker_weights", np.asarray(model.combiner.weights)))
            arrays.append(("stacker_bias", np.asarray(model.combiner.bias)))
        return "ensemble", meta, arrays
    raise InvalidArgumentError(f"cannot serialize object of type {type(model).__name__}")


def _model_from_manifest(kind: str, meta, lookup):
    if kind == "linear":
        return LinearModel(
            weights=lookup["weights"],
            bias=_scalar(lookup["bias"]),
            target_feature=int(meta["target_feature"]),
            n_features=int(meta["n_features"]),
            ridge_fallback=bool(meta["ridge_fallback"]),
        )
    if kind == "arimax":
        return ArimaxModel(
            p=int(meta["p"]),
            d=int(meta["d"]),
            q=int(meta["q"]),
            c=_scalar(lookup["c"]),
            phi=lookup["phi"],
            theta=lookup["theta"],
            beta=lookup["beta"],
            target_feature=int(meta["target_feature"]),
            n_features=int(meta["n_features"]),
            css_initial=float(meta["css_initial"]),
            css_final=float(meta["css_final"]),
            css_warning=bool(meta["css_warning"]),
        )
    if kind == "network":
        return _network_from_manifest(meta, lookup)
    if kind == "ensemble":
        members = tuple(
            _network_from_manifest(m_meta, lookup, prefix=f"member{i}/")
            for i, m_meta in enumerate(meta["members"])
        )
        c_meta = meta["combiner"]
        if c_meta["kind"] == "stacker":
            combiner = Combiner(
                kind="stacker",
                weights=tuple(float(w) for w in np.atleast_1d(lookup["stacker_weights"])),
                bias=_scalar(lookup["stacker_bias"]),
                fallback_reason=c_meta["fallback_reason"],
            )
        else:
            combiner = Combiner(kind="mean", fallback_reason=c_meta["fallback_reason"])
        threshold = meta["boost_threshold"]
        return EnsembleModel(
            members=members,
            combiner=combiner,
            method=meta["method"],
            boost_threshold=None if threshold is None else float(threshold),
        )
    raise UnsupportedVersionError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    kind, meta, arrays = _manifest_for(model)
    payload_parts = []
    manifest_arrays = []
    for name, arr in arrays:
        a = _le64(arr)
        manifest_arrays.append({"name": name, "shape": list(a.shape)})
        payload_parts.append(a.tobytes())
    payload = b"".join(payload_parts)
    header = {
        "model_kind": kind,
        "meta": meta,
        "arrays": manifest_arrays,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise IntegrityError("not a model artifact (bad magic)")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"artifact format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    header_len = int.from_bytes(blob[8:16], "little")
    if len(blob) < 16 + header_len:
        raise IntegrityError("truncated artifact header")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable artifact header: {exc}") from None
    payload = blob[16 + header_len :]
    if len(payload) != header["payload_bytes"]:
        raise IntegrityError(
            f"payload length mismatch: expected {header['payload_bytes']} bytes,"
            f" found {len(payload)}"
        )
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise IntegrityError("payload checksum mismatch")
    lookup = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise IntegrityError(f"array {entry['name']!r} exceeds payload")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").reshape(shape)
        lookup[entry["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise IntegrityError("payload has trailing bytes")
    return _model_from_manifest(header["model_kind"], header["meta"], lookup)


def _sig6(value: float) -> float:
    return float(f"{float(value):.6g}")


def _round_metrics(node: Any) -> Any:
    """6 significant digits on every metric field, recursively."""
    if isinstance(node, dict):
        out = {}
        for key, value in node.items():
            is_metric = key in _METRIC_KEYS or key.endswith("_mse") or key.endswith("_mae")
            if is_metric and isinstance(value, (int, float)) and not isinstance(value, bool):
                out[key] = _sig6(value)
            else:
                out[key] = _round_metrics(value)
        return out
    if isinstance(node, (list, tuple)):
        return [_round_metrics(v) for v in node]
    return node


def trace_as_dict(trace: TrainTrace) -> dict:
    return {
        "train_losses": list(trace.train_losses),
        "val_losses": list(trace.val_losses),
        "stopped_epoch": trace.stopped_epoch,
        "best_epoch": trace.best_epoch,
        "restored": trace.restored,
    }


def boost_trace_as_dict(trace: BoostTrace) -> dict:
    return {
        "selected_indices": [list(sel) for sel in trace.selected_indices],
        "stopped_early": trace.stopped_early,
    }


@dataclass(frozen=True)
class RunReport:
    """Everything one pipeline run produced, ready for JSON.

    `models` maps each trained model name to its entry (metrics,
    trace, details); the name set must match what the run was asked
    to train.  `sweep` holds per-proportion rows for filter sweeps.
    `timings` is the only subtree allowed to differ between identical
    runs.
    """

    config: dict
    audit: dict
    models: dict
    timings: dict = field(default_factory=dict)
    sweep: list | None = None
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in self.models:
            if not isinstance(name, str):
                raise InvalidArgumentError("model names must be strings")

    def as_dict(self) -> dict:
        doc = {
            "schema_version": 1,
            "config": self.config,
            "audit": self.audit,
            "models": _round_metrics(self.models),
            "errors": self.errors,
            "timings": self.timings,
        }
        if self.sweep is not None:
            doc["sweep"] = _round_metrics(self.sweep)
        return doc


def write_report(report: RunReport, path) -> None:
    text = json.dumps(report.as_dict(), sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
