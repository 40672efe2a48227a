"""Diagonal state-space scan and the video state-space fusion operator.

Per channel ``j`` the scan runs, from a zero initial state::

    x[l] = a[j] * x[l-1] + b[j] * u[l, j]
    y[l, j] = c[j] * x[l] + d[j] * u[l, j]

with ``a = sigmoid(a_raw)`` so the decay always lies in (0, 1).

Fusion forms ``z = alpha*h_prev + beta*f_t + gamma*s``, flattens the spatial
grid of ``z`` in raster order, pushes it through the stacked scan layers and
reshapes the last layer's output back into the new hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class SsmLayerParams:
    a_raw: Tensor
    b: Tensor
    c_out: Tensor
    d: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self.tensors()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise ShapeError(f"SSM layer vectors must share one 1-D shape, got {sorted(shapes)}")

    @property
    def channels(self) -> int:
        return self.a_raw.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.a_raw, self.b, self.c_out, self.d]

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, requires_grad=False) -> "SsmLayerParams":
        """Layer whose state is never excited, so the output equals the input."""
        def vec(v):
            return Tensor(np.full(channels, v), requires_grad=requires_grad, dtype=dtype)

        return cls(vec(0.0), vec(0.0), vec(0.0), vec(1.0))

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, requires_grad=True) -> "SsmLayerParams":
        # decays spread over (0.5, 0.95); b = 1 - a keeps the state at input scale
        decay = np.linspace(0.5, 0.95, channels) if channels > 1 else np.array([0.75])
        a_raw = np.log(decay / (1 - decay))
        b = 1 - decay
        c_out = rng.normal(0.0, 0.5, channels)
        d = np.ones(channels)

        def t(v):
            return Tensor(v, requires_grad=requires_grad)

        return cls(t(a_raw), t(b), t(c_out), t(d))


@dataclass
class FusionParams:
    alpha: Tensor
    beta: Tensor
    gamma: Tensor
    layers: list[SsmLayerParams] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def tensors(self) -> list[Tensor]:
        out = [self.alpha, self.beta, self.gamma]
        for layer in self.layers:
            out.extend(layer.tensors())
        return out

    @classmethod
    def init(cls, channels: int, num_layers: int, rng: np.random.Generator, requires_grad=True) -> "FusionParams":
        def s(v):
            return Tensor(v, requires_grad=requires_grad)

        layers = [SsmLayerParams.init(channels, rng, requires_grad) for _ in range(num_layers)]
        return cls(s(0.5), s(1.0), s(0.5), layers)


def _check_layer(u: Tensor, layer: SsmLayerParams) -> None:
    if u.ndim != 2:
        raise ShapeError(f"scan input must be [L, c], got {u.shape}")
    if u.shape[1] != layer.channels:
        raise ShapeError(f"scan input has {u.shape[1]} channels, layer has {layer.channels}")


def _linear_scan(u: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Fused forward/backward for the diagonal recurrence, float64 inside."""
    u64 = u.data.astype(np.float64)
    a64, b64, c64, d64 = (t.data.astype(np.float64) for t in (a, b, c, d))
    length, channels = u64.shape
    x = np.empty_like(u64)
    for j in range(channels):
        x[:, j] = lfilter([b64[j]], [1.0, -a64[j]], u64[:, j])
    y = c64 * x + d64 * u64

    def bw(g):
        g64 = g.astype(np.float64)
        # adjoint state: gx[l] = c*g[l] + a*gx[l+1], run backwards in time
        src = (c64 * g64)[::-1]
        gx = np.empty_like(g64)
        for j in range(channels):
            gx[:, j] = lfilter([1.0], [1.0, -a64[j]], src[:, j])
        gx = gx[::-1]
        x_prev = np.vstack([np.zeros((1, channels)), x[:-1]])
        gu = d64 * g64 + b64 * gx
        ga = (gx * x_prev).sum(axis=0)
        gb = (gx * u64).sum(axis=0)
        gc = (g64 * x).sum(axis=0)
        gd = (g64 * u64).sum(axis=0)
        return gu, ga, gb, gc, gd

    return Tensor.from_op(y.astype(u.dtype), (u, a, b, c, d), bw, "ssm_scan")


def ssm_scan(u: Tensor, layer: SsmLayerParams) -> Tensor:
    """Run one diagonal SSM layer over a ``[L, c]`` sequence."""
    _check_layer(u, layer)
    a = T.sigmoid(layer.a_raw)
    return _linear_scan(u, a, layer.b, layer.c_out, layer.d)


def ssm_scan_naive(u: Tensor, layer: SsmLayerParams) -> Tensor:
    """Step-by-step reference for :func:`ssm_scan`, built from plain tensor ops."""
    _check_layer(u, layer)
    out_dtype = u.dtype
    u = T.astype(u, np.float64)
    a = T.astype(T.sigmoid(layer.a_raw), np.float64)
    b, c, d = (T.astype(t, np.float64) for t in (layer.b, layer.c_out, layer.d))
    x = T.zeros(layer.channels, dtype=np.float64)
    ys = []
    for step in range(u.shape[0]):
        u_l = u[step]
        x = a * x + b * u_l
        ys.append(c * x + d * u_l)
    return T.astype(T.stack(ys), out_dtype)


def fuse(h_prev: Tensor, f_t: Tensor, s: Tensor, params: FusionParams) -> Tensor:
    """New hidden state from the previous state, content features and style map."""
    if not (h_prev.shape == f_t.shape == s.shape) or h_prev.ndim != 3:
        raise ShapeError(f"fuse: shapes differ: h_prev {h_prev.shape}, f_t {f_t.shape}, s {s.shape}")
    h, w, c = h_prev.shape
    z = params.alpha * h_prev + params.beta * f_t + params.gamma * s
    seq = z.reshape(h * w, c)
    for layer in params.layers:
        seq = ssm_scan(seq, layer)
    return seq.reshape(h, w, c)


def mix_output(h_t: Tensor, f_t: Tensor) -> Tensor:
    """Residual mix of hidden state and content features."""
    if h_t.shape != f_t.shape:
        raise ShapeError(f"mix_output: {h_t.shape} vs {f_t.shape}")
    return h_t + f_t
