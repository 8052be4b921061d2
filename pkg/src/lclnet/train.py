"""Optimization loop: He initialization, SGD with classical momentum,
step-wise learning-rate decay, checkpointing, and the loss trace.

Checkpoint format (little-endian, bit-exact across platforms):
magic ``LCLCKPT1``, u32 JSON header length, UTF-8 JSON header, then one
``u64 byte-length + raw float32/64 data`` record per tensor in header
order. The header records the model spec, step, seed, dtype, momentum
variant, and the tensor manifest (params, then running mean/var pairs).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError
from .nn import ContrastNet, ModelParams, ModelSpec, bn_layer_channels, contrast_loss, episode_labels, param_shapes
from .sampler import make_batch, rng_stream
from .tensor import RunningStats, Tensor

CHECKPOINT_MAGIC = b"LCLCKPT1"
CHECKPOINT_VERSION = 1
MOMENTUM_VARIANT = "classical"


@dataclass
class TrainConfig:
    n_contexts: int = 40
    lr0: float = 0.1
    momentum: float = 0.9
    decay1: int = 44800
    decay2: int = 51200
    max_steps: int = 57600
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final only
    checkpoint_path: str | None = None
    trace_path: str | None = None

    def __post_init__(self):
        if self.n_contexts < 1:
            raise ConfigError(f"n_contexts must be >= 1, got {self.n_contexts}")
        if not 0 < self.decay1 < self.decay2 < self.max_steps:
            raise ConfigError(
                f"need 0 < decay1 < decay2 < max_steps, got "
                f"{self.decay1}/{self.decay2}/{self.max_steps}"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelParams:
    """He-normal conv/dense weights (std = sqrt(2/fan_in)), unit BN scale,
    zero shifts and biases, fresh running stats."""
    rng = rng_stream(seed, 0xC0)
    tensors = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".gamma"):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith((".beta", ".b")):
            data = np.zeros(shape, dtype=dtype)
        elif name.endswith(".w"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        else:  # pragma: no cover - manifest only emits the suffixes above
            raise ConfigError(f"unrecognized parameter name {name}")
        tensors[name] = Tensor(data, requires_grad=True)
    bn_stats = {
        name: RunningStats(ch, dtype=dtype) for name, ch in bn_layer_channels(spec).items()
    }
    return ModelParams(tensors, bn_stats)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """lr0 through decay1, then lr0/10, then lr0/100 past decay2."""
    if step <= cfg.decay1:
        return cfg.lr0
    if step <= cfg.decay2:
        return cfg.lr0 * 0.1
    return cfg.lr0 * 0.01


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)  # name -> np.ndarray
    step: int = 0


def sgd_momentum_step(params: ModelParams, state: OptimizerState, lr: float, momentum: float = 0.9) -> None:
    """Classical momentum: v <- mu*v - lr*g; p <- p + v. Skips grad-less params."""
    for name, p in params.tensors.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {name}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v - lr * p.grad
        state.velocity[name] = v
        p.data += v
    state.step += 1


@dataclass
class TrainResult:
    model: ContrastNet
    trace: list  # (step, lr, loss)


def train(cfg: TrainConfig, spec: ModelSpec, dataset, log_every: int = 0, fixed_batch=None) -> TrainResult:
    """Run cfg.max_steps episodic steps over `dataset`.

    `fixed_batch` (a list of contexts) freezes the batch for overfitting
    checks; normally every step draws a fresh batch from the seed stream.
    """
    if len(dataset.categories) < spec.n_candidates:
        raise ConfigError(
            f"dataset has {len(dataset.categories)} categories, "
            f"need >= {spec.n_candidates}"
        )
    if dataset.min_samples_per_category < 2:
        raise ConfigError("every category needs at least 2 samples for training")

    params = init_params(spec, cfg.seed)
    model = ContrastNet(spec, params)
    opt = OptimizerState()
    batch_rng = rng_stream(cfg.seed, 0xBA)
    trace = []

    for step in range(cfg.max_steps):
        batch = fixed_batch or make_batch(dataset, cfg.n_contexts, spec.n_candidates, batch_rng)
        acts = model.forward_contexts(dataset, batch, train=True)
        loss = contrast_loss(acts, episode_labels(batch))
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericError(f"non-finite loss at step {step}")
        for p in params.tensors.values():
            p.zero_grad()
        loss.backward()
        lr = lr_schedule(step, cfg)
        try:
            sgd_momentum_step(params, opt, lr, cfg.momentum)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        trace.append((step, lr, loss_val))
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  lr {lr:.4f}  loss {loss_val:.5f}", flush=True)
        if (
            cfg.checkpoint_every
            and cfg.checkpoint_path
            and step > 0
            and step % cfg.checkpoint_every == 0
        ):
            save_checkpoint(model, {"step": step, "seed": cfg.seed}, cfg.checkpoint_path)

    if cfg.checkpoint_path:
        save_checkpoint(model, {"step": cfg.max_steps, "seed": cfg.seed}, cfg.checkpoint_path)
    if cfg.trace_path:
        write_trace(trace, cfg.trace_path)
    return TrainResult(model, trace)


def write_trace(trace: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in trace:
            w.writerow([step, f"{lr:.6g}", f"{loss:.9g}"])


# -- checkpoint serialization ----------------------------------------------------


def _tensor_manifest(model: ContrastNet) -> list:
    entries = []
    for name, t in model.params.tensors.items():
        entries.append({"name": name, "kind": "param", "shape": list(t.shape), "dtype": str(t.dtype)})
    for name, st in model.params.bn_stats.items():
        for kind, arr in (("bn_mean", st.mean), ("bn_var", st.var)):
            entries.append(
                {"name": name, "kind": kind, "shape": list(arr.shape), "dtype": str(arr.dtype)}
            )
    return entries


def save_checkpoint(model: ContrastNet, meta: dict, path) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "momentum_variant": MOMENTUM_VARIANT,
        "bn_initialized": {n: s.initialized for n, s in model.params.bn_stats.items()},
        "tensors": _tensor_manifest(model),
        **meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for entry in header["tensors"]:
            arr = _lookup_array(model, entry)
            raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)


def _lookup_array(model: ContrastNet, entry: dict) -> np.ndarray:
    if entry["kind"] == "param":
        return model.params.tensors[entry["name"]].data
    st = model.params.bn_stats[entry["name"]]
    return st.mean if entry["kind"] == "bn_mean" else st.var


def load_checkpoint(path, expect_spec: ModelSpec | None = None):
    """Load a checkpoint; returns (ContrastNet, meta dict)."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {p}: {exc}") from exc
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{p}: bad magic")
    off = len(CHECKPOINT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
        off += hlen
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{p}: corrupt header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{p}: unsupported version {header.get('version')}")
    spec = ModelSpec(**header["spec"])
    if expect_spec is not None and spec != expect_spec:
        raise CheckpointError(f"{p}: checkpoint spec {spec} != expected {expect_spec}")

    arrays = []
    for entry in header["tensors"]:
        try:
            (nbytes,) = struct.unpack_from("<Q", raw, off)
            off += 8
            chunk = raw[off : off + nbytes]
            if len(chunk) != nbytes:
                raise CheckpointError(f"{p}: truncated tensor data for {entry['name']}")
            off += nbytes
        except struct.error as exc:
            raise CheckpointError(f"{p}: truncated file: {exc}") from exc
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        arr = arr.astype(entry["dtype"]).reshape(entry["shape"])
        arrays.append((entry, arr))

    tensors, bn_stats = {}, {}
    for entry, arr in arrays:
        name, kind = entry["name"], entry["kind"]
        if kind == "param":
            tensors[name] = Tensor(arr.copy(), requires_grad=True)
        else:
            st = bn_stats.setdefault(name, RunningStats(arr.shape[0], dtype=arr.dtype))
            if kind == "bn_mean":
                st.mean = arr.copy()
            else:
                st.var = arr.copy()
    for name, st in bn_stats.items():
        st.initialized = bool(header.get("bn_initialized", {}).get(name, False))

    params = ModelParams(tensors, bn_stats)
    model = ContrastNet(spec, params)  # validates shapes against the spec
    meta = {k: header[k] for k in header if k not in ("tensors", "spec", "bn_initialized")}
    return model, meta
