"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the op set the contrast network needs: elementwise
arithmetic, ReLU, sigmoid, log, clip, reductions, reshape, dense
(matmul + bias), 2D cross-correlation with 1x1/3x3 kernels, batch
normalization with running statistics, and global average pooling.

Conventions:
  - row-major data, NCHW layout for image tensors;
  - no silent broadcasting: elementwise ops require identical shapes
    (broadcast happens only inside fused ops such as dense and
    batch_norm, where it is part of the contract);
  - float32 by default, float64 supported for finite-difference work;
  - values are expected to stay finite; `backward` raises on a
    non-scalar root, finiteness is asserted by callers at the loss.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ContractError, ShapeError, UninitializedStatsError

BN_EPS = 1e-5
BN_STATS_DECAY = 0.99


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A node in the compute graph: a value plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def backward(self):
        """Populate .grad on every requires_grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic --------------------------------------------

    def _coerce_same_shape(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError(f"elementwise op on shapes {self.shape} vs {other.shape}")
            return other
        if isinstance(other, numbers.Number):
            return None  # scalar constant
        raise TypeError(f"unsupported operand type {type(other)!r}")

    def __add__(self, other):
        o = self._coerce_same_shape(other)
        if o is None:
            data = self.data + self.dtype.type(other)

            def back(g, a=self):
                if a.requires_grad:
                    a._accumulate(g)

            return Tensor._result(data, (self,), back)
        data = self.data + o.data

        def back(g, a=self, b=o):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return Tensor._result(data, (self, o), back)

    __radd__ = __add__

    def __neg__(self):
        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._result(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, numbers.Number):
            c = self.dtype.type(other)

            def back(g, a=self):
                if a.requires_grad:
                    a._accumulate(g * c)

            return Tensor._result(self.data * c, (self,), back)
        if isinstance(other, np.ndarray):
            if other.shape != self.shape:
                raise ShapeError(f"elementwise op on shapes {self.shape} vs {other.shape}")
            const = other

            def back(g, a=self):
                if a.requires_grad:
                    a._accumulate(g * const)

            return Tensor._result(self.data * const, (self,), back)
        o = self._coerce_same_shape(other)

        def back(g, a=self, b=o):
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)

        return Tensor._result(self.data * o.data, (self, o), back)

    __rmul__ = __mul__

    # -- nonlinearities ------------------------------------------------------

    def relu(self):
        mask = self.data > 0  # subgradient at 0 is 0

        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(g * mask)

        return Tensor._result(np.where(mask, self.data, self.dtype.type(0)), (self,), back)

    def sigmoid(self):
        d = self.data
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        out[~pos] = ez / (1.0 + ez)

        def back(g, a=self, s=out):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 - s))

        return Tensor._result(out, (self,), back)

    def log(self):
        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._result(np.log(self.data), (self,), back)

    def clip(self, lo, hi):
        mask = (self.data >= lo) & (self.data <= hi)

        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(g * mask)

        return Tensor._result(np.clip(self.data, lo, hi), (self,), back)

    # -- reductions / shape ---------------------------------------------------

    def sum(self):
        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(np.full_like(a.data, g.reshape(())))

        return Tensor._result(np.asarray(self.data.sum(), dtype=self.dtype), (self,), back)

    def mean(self):
        n = self.data.size

        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(np.full_like(a.data, g.reshape(()) / n))

        return Tensor._result(np.asarray(self.data.mean(), dtype=self.dtype), (self,), back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape

        def back(g, a=self):
            if a.requires_grad:
                a._accumulate(g.reshape(orig))

        return Tensor._result(self.data.reshape(shape), (self,), back)


# -- fused network ops ---------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[B,D] @ w[D,M] (+ b[M])."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"dense expects 2D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense inner dims disagree: {x.shape} vs {w.shape}")
    data = x.data @ w.data
    parents = [x, w]
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
        data = data + b.data
        parents.append(b)

    def back(g, xx=x, ww=w, bb=b):
        if xx.requires_grad:
            xx._accumulate(g @ ww.data.T)
        if ww.requires_grad:
            ww._accumulate(xx.data.T @ g)
        if bb is not None and bb.requires_grad:
            bb._accumulate(g.sum(axis=0))

    return Tensor._result(data, parents, back)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation, NCHW. Kernels limited to 1x1 and 3x3."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4D operands, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C} vs weight {Cw}")
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1/3x3 kernels, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ContractError(f"conv2d stride must be 1 or 2, got {stride}")
    if pad not in (0, 1):
        raise ContractError(f"conv2d pad must be 0 or 1, got {pad}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out = np.zeros((B, F, Ho, Wo), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride]
            # [B,C,Ho,Wo] x [F,C] -> [B,Ho,Wo,F]
            out += np.tensordot(patch, w.data[:, :, u, v], axes=([1], [1])).transpose(0, 3, 1, 2)

    def back(g, xx=x, ww=w, xpad=xp):
        if ww.requires_grad:
            gw = np.empty_like(ww.data)
            for u in range(kh):
                for v in range(kw):
                    patch = xpad[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride]
                    gw[:, :, u, v] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
            ww._accumulate(gw)
        if xx.requires_grad:
            gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
            for u in range(kh):
                for v in range(kw):
                    # [B,F,Ho,Wo] x [F,C] -> [B,Ho,Wo,C]
                    contrib = np.tensordot(g, ww.data[:, :, u, v], axes=([1], [0]))
                    gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += (
                        contrib.transpose(0, 3, 1, 2)
                    )
            if pad:
                gxp = gxp[:, :, pad:-pad, pad:-pad]
            xx._accumulate(gxp)

    return Tensor._result(out, (x, w), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over spatial dims: [B,C,H,W] -> [B,C]."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4D input, got {x.shape}")
    _, _, H, W = x.shape
    n = H * W

    def back(g, a=x):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g[:, :, None, None] / n, a.shape).copy())

    return Tensor._result(x.data.mean(axis=(2, 3)), (x,), back)


class RunningStats:
    """Per-channel running mean/variance for one normalization layer."""

    __slots__ = ("mean", "var", "initialized")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.initialized = False

    def update(self, batch_mean, batch_var):
        self.mean = BN_STATS_DECAY * self.mean + (1.0 - BN_STATS_DECAY) * batch_mean
        self.var = BN_STATS_DECAY * self.var + (1.0 - BN_STATS_DECAY) * batch_var
        self.initialized = True


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, train: bool) -> Tensor:
    """Channelwise normalization over (B,H,W); train mode updates `stats`."""
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects 4D input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},), got {gamma.shape}/{beta.shape}")
    d = x.data
    if train:
        mu = d.mean(axis=(0, 2, 3))
        var = d.var(axis=(0, 2, 3))
        stats.update(mu.astype(stats.mean.dtype), var.astype(stats.var.dtype))
    else:
        if not stats.initialized:
            raise UninitializedStatsError("eval-mode batch_norm before any training batch")
        mu = stats.mean.astype(d.dtype)
        var = stats.var.astype(d.dtype)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (d - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def back(g, xx=x, gg=gamma, bb=beta, xhat=xhat, inv=inv, train=train):
        if gg.requires_grad:
            gg._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if bb.requires_grad:
            bb._accumulate(g.sum(axis=(0, 2, 3)))
        if xx.requires_grad:
            gscaled = g * gg.data[None, :, None, None]
            if train:
                gm = gscaled.mean(axis=(0, 2, 3), keepdims=True)
                gxm = (gscaled * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = inv[None, :, None, None] * (gscaled - gm - xhat * gxm)
            else:
                gx = gscaled * inv[None, :, None, None]
            xx._accumulate(gx)

    return Tensor._result(out, (x, gamma, beta), back)


def grad_check(forward_fn, params, h: float = 1e-5, max_coords: int = 200, rng=None) -> float:
    """Compare analytic gradients of a scalar-valued forward against central differences.

    `forward_fn` takes no arguments, reads `params` (a list of Tensors) and
    returns a scalar Tensor; it must be deterministic. Returns the max over
    sampled coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    Use float64 params: finite differences are unusable in float32.
    """
    for p in params:
        p.zero_grad()
    loss = forward_fn()
    loss.backward()
    analytic = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        analytic.append(g.copy())

    coords = [(pi, i) for pi, p in enumerate(params) for i in range(p.data.size)]
    if len(coords) > max_coords:
        if rng is None:
            rng = np.random.default_rng(0)
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in idx]

    worst = 0.0
    for pi, i in coords:
        p = params[pi]
        orig = p.data.flat[i]
        p.data.flat[i] = orig + h
        f_plus = forward_fn().item()
        p.data.flat[i] = orig - h
        f_minus = forward_fn().item()
        p.data.flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[pi].flat[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
