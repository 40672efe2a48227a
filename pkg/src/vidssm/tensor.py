"""Dense float tensors with reverse-mode automatic differentiation.

Every differentiable operation records its parents and a backward rule on the
output tensor. The computation record of a loss is the set of nodes reachable
from it through those links; :func:`backward` orders it topologically and
replays it in reverse.

Only rank-0 tensors broadcast against other shapes. Anything else must be
made explicit with :func:`broadcast_to`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLOATS = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    """A dense array with optional gradient tracking.

    Leaves are created directly; interior nodes are created by operations and
    remember their parents only when at least one parent tracks gradients.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float32)
        if arr.dtype.type not in _FLOATS:
            raise TypeError(f"unsupported dtype {arr.dtype}")
        _check(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        """Wrap the result of a custom operation.

        ``backward(g)`` must return one gradient array (or None) per parent.
        """
        _check(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _check(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad, dtype=dtype)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape} (only scalars broadcast)")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: division by exact zero")
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor.from_op(out, (a, b), bw, "div")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # subgradient at exactly 0 is 0
    return Tensor.from_op(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def square(a: Tensor) -> Tensor:
    return Tensor.from_op(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    out = np.sqrt(a.data)

    def bw(g):
        if np.any(out == 0):
            raise ZeroDivisionError("sqrt: gradient at zero is unbounded")
        return (g / (2 * out),)

    return Tensor.from_op(out, (a,), bw, "sqrt")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (g * inside,), "clamp")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "square": square,
    "sqrt": sqrt,
    "exp": exp,
    "sigmoid": sigmoid,
}
_BINARY = {"add", "sub", "mul", "div"}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return fn(a, b)
    return fn(as_tensor(a))


def astype(a: Tensor, dtype) -> Tensor:
    if a.dtype == dtype:
        return a
    return Tensor.from_op(a.data.astype(dtype), (a,), lambda g: (g.astype(a.dtype),), "astype")


# ---------------------------------------------------------------------------
# reductions and linear algebra


def reduce(op_kind: str, a: Tensor) -> Tensor:
    if op_kind == "sum":
        return tsum(a)
    if op_kind == "mean":
        return mean(a)
    raise ValueError(f"unknown reduction {op_kind!r}")


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),), "mean")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor.from_op(a.data @ b.data, (a, b), bw, "matmul")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-size convolution of an ``[h, w, c_in]`` map with zero padding.

    ``kernel`` has shape ``[k, k, c_in, c_out]`` with odd ``k``; ``bias`` is
    an optional ``[c_out]`` vector added at every position.
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks {x.shape}, {kernel.shape}")
    k, k2, cin, cout = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    if x.shape[2] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[2]} channels, kernel expects {cin}")
    h, w, _ = x.shape
    p = k // 2
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    # [h, w, cin, k, k] -> [h*w, k*k*cin] in (ky, kx, cin) order to match the kernel
    cols = sliding_window_view(xp, (k, k), axis=(0, 1)).transpose(0, 1, 3, 4, 2).reshape(h * w, k * k * cin)
    wmat = kernel.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(h, w, cout)
    parents = [x, kernel]
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(h * w, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gcols = (g2 @ wmat.T).reshape(h, w, k, k, cin)
        gxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                gxp[dy:dy + h, dx:dx + w] += gcols[:, :, dy, dx]
        grads = [gxp[p:p + h, p:p + w], gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return Tensor.from_op(out, parents, bw, "conv2d")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    out = np.ascontiguousarray(a.data[idx])
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(out, (a,), bw, "getitem")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, bw, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, tensors, bw, "concat")


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    """Explicitly tile ``a`` to ``shape`` (numpy rules, leading axes added)."""
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    lead = len(shape) - a.ndim

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor.from_op(out, (a,), bw, "broadcast_to")


def upsample_nearest(a: Tensor, factor: int = 2) -> Tensor:
    """Repeat every pixel of an ``[h, w, c]`` map ``factor`` times along both axes."""
    out = a.data.repeat(factor, axis=0).repeat(factor, axis=1)
    h, w, c = a.shape

    def bw(g):
        return (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),)

    return Tensor.from_op(out, (a,), bw, "upsample")


def avg_pool(a: Tensor, size: int) -> Tensor:
    """Non-overlapping average pooling of ``[h, w, c]``; edge windows are truncated."""
    h, w, c = a.shape
    ny, nx = -(-h // size), -(-w // size)
    out = np.empty((ny, nx, c), dtype=a.dtype)
    counts = np.empty((ny, nx, 1), dtype=a.dtype)
    for i in range(ny):
        for j in range(nx):
            block = a.data[i * size:(i + 1) * size, j * size:(j + 1) * size]
            counts[i, j] = block.shape[0] * block.shape[1]
            out[i, j] = block.sum(axis=(0, 1)) / counts[i, j]

    def bw(g):
        scaled = g / counts
        full = scaled.repeat(size, axis=0).repeat(size, axis=1)[:h, :w]
        return (np.ascontiguousarray(full),)

    return Tensor.from_op(out, (a,), bw, "avg_pool")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def record_of(loss: Tensor) -> list[Tensor]:
    """The nodes feeding ``loss`` in topological order (inputs before outputs)."""
    return _toposort(loss)


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray] | list[np.ndarray]:
    """Propagate gradients from a scalar ``loss``.

    Without ``wrt``, returns ``{leaf: grad}`` for every tracked leaf reachable
    from ``loss`` and stores the result on ``leaf.grad``. With ``wrt``, returns
    a list of gradients aligned to it; leaves the loss does not depend on get
    zeros. Calling twice on the same graph gives identical results.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    order = _toposort(loss)
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for leaf, g in leaves.items():
        leaf.grad = g
    if wrt is None:
        return leaves
    out = []
    for t in wrt:
        g = leaves.get(t)
        out.append(g if g is not None else np.zeros_like(t.data))
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """Max over coordinates of ``|autodiff - central| / max(1, |central|)``."""
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-5, 1e-2], got {eps}")
    base = np.array(x.data, copy=True)
    leaf = Tensor(base, requires_grad=True, dtype=base.dtype)
    out = f(leaf)
    (analytic,) = backward(out, [leaf])
    numeric = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(base, dtype=base.dtype)).item()
        flat[i] = orig - eps
        lo = f(Tensor(base, dtype=base.dtype)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (hi - lo) / (2 * eps)
    if not np.isfinite(numeric).all():
        raise NonFiniteError("finite_diff_check: non-finite difference quotient")
    err = np.abs(analytic.astype(np.float64) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
