"""Small dense tensor engine with tape-based reverse-mode differentiation.

Everything is float64 and row-major.  Operations record themselves on the
innermost active :class:`GradTape` whenever one of their inputs requires a
gradient; :meth:`GradTape.backward` then walks the recorded list once, in
reverse.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "DimensionError",
    "EmptyNeighborhoodError",
    "GradientContractError",
    "NonFiniteError",
    "tensor",
    "zeros",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "index",
    "exp",
    "tanh",
    "sigmoid",
    "relu",
    "elu",
    "leaky_relu",
    "square",
    "sqrt",
    "cumsum",
    "smooth_l1",
    "masked_softmax",
    "conv_time",
    "linear",
    "gru_cell",
    "fd_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptyNeighborhoodError(ValueError):
    """A masked softmax row has no active entry."""


class GradientContractError(ValueError):
    """A differentiation request violates its preconditions."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf from finite inputs."""


_TAPES: list["GradTape"] = []

# flipped off only by code that deliberately probes overflow behaviour
CHECK_FINITE = True


class Tensor:
    __slots__ = ("data", "requires_grad", "__weakref__")
    # lets ndarray <op> Tensor dispatch to the reflected Tensor method
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class GradTape:
    """Ordered record of differentiable operations plus a parameter registry.

    Use as a context manager around the forward computation::

        with GradTape(params) as tape:
            loss = model(params)
        grads = tape.backward(loss)
    """

    def __init__(self, params: dict[str, Tensor] | None = None):
        self.params: dict[str, Tensor] = {}
        self.ops: list[tuple[Tensor, tuple, Callable]] = []
        for name, value in (params or {}).items():
            self.watch(name, value)

    def watch(self, name: str, value: Tensor) -> Tensor:
        value.requires_grad = True
        self.params[name] = value
        return value

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(loss, self)


def backward(loss: Tensor, tape: GradTape) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` for every parameter registered on ``tape``.

    Parameters the loss never touched receive exact zeros.
    """
    if loss.data.size != 1:
        raise GradientContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {}
    for name, p in tape.params.items():
        g = grads.get(id(p))
        result[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return result


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, parents: tuple, fn: Callable) -> Tensor:
    if CHECK_FINITE and not np.isfinite(out).all():
        if all(np.isfinite(p.data).all() for p in parents):
            raise NonFiniteError("forward operation produced non-finite values from finite inputs")
    result = Tensor(out)
    if _TAPES and any(p.requires_grad for p in parents):
        result.requires_grad = True
        _TAPES[-1].ops.append((result, parents, fn))
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes of ``a`` (and of ``b``, if 3-D) are batch axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def grad(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(a.data @ b.data, (a, b), grad)


# -- reductions and shape ops ----------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([p.data for p in parts], axis=axis), parts,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _record(np.stack([p.data for p in parts], axis=axis), parts, grad)


def index(a, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in the gradient."""
    a = _as_tensor(a)

    basic = all(k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice))
                for k in (key if isinstance(key, tuple) else (key,)))

    def grad(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _record(a.data[key], (a,), grad)


# -- elementwise nonlinearities --------------------------------------------


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _record(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return _record(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = _as_tensor(a)
    factor = np.where(a.data >= 0, 1.0, slope)
    return _record(a.data * factor, (a,), lambda g: (g * factor,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def cumsum(a, axis: int = 0) -> Tensor:
    a = _as_tensor(a)

    def grad(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(np.cumsum(a.data, axis=axis), (a,), grad)


def smooth_l1(a, beta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: quadratic inside ``|x| < beta``, linear outside."""
    a = _as_tensor(a)
    x = a.data
    small = np.abs(x) < beta
    out = np.where(small, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)
    slope = np.where(small, x / beta, np.sign(x))
    return _record(out, (a,), lambda g: (g * slope,))


# -- layer primitives --------------------------------------------------------


def masked_softmax(logits, active, axis: int = -1) -> Tensor:
    """Softmax over the ``active`` entries of ``axis``; inactive entries are exactly 0.

    ``active`` is a boolean array broadcastable to ``logits`` or, for 1-D
    logits, a sequence of indices.
    """
    logits = _as_tensor(logits)
    active = np.asarray(active)
    if active.dtype != bool:
        idx = active.astype(int)
        active = np.zeros(logits.shape, dtype=bool)
        active[idx] = True
    active = np.broadcast_to(active, logits.shape)
    if not active.any(axis=axis).all():
        raise EmptyNeighborhoodError("masked_softmax: a row has no active entries")
    x = np.where(active, logits.data, -np.inf)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.where(active, np.exp(x), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (logits,), grad)


def conv_time(features, kernel, padding: str = "same") -> Tensor:
    """1-D convolution along axis 0 of ``[T, N, C_in]`` with a ``[k, C_in, C_out]`` kernel.

    Zero padding keeps the output length at T.  Each agent (axis 1) is
    convolved independently with the shared kernel.
    """
    x, w = _as_tensor(features), _as_tensor(kernel)
    if padding != "same":
        raise ValueError(f"unsupported padding mode {padding!r}")
    k = w.shape[0]
    if k % 2 == 0:
        raise ValueError(f"conv_time needs an odd kernel width, got {k}")
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise DimensionError(f"conv_time shapes {x.shape} and {w.shape} do not align")
    T = x.shape[0]
    half = k // 2
    padded = np.pad(x.data, ((half, half), (0, 0), (0, 0)))
    out = padded[0:T] @ w.data[0]
    for j in range(1, k):
        out = out + padded[j:j + T] @ w.data[j]

    def grad(g):
        gx = gw = None
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for j in range(k):
                gpad[j:j + T] += g @ w.data[j].T
            gx = gpad[half:half + T]
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack([padded[j:j + T].reshape(-1, x.shape[2]).T @ g2 for j in range(k)])
        return gx, gw

    return _record(out, (x, w), grad)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def gru_cell(x, h, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    """One gated-recurrent-unit step.

    ``params`` holds ``wx [C_in, 3H]``, ``wh [H, 3H]``, ``bx [3H]`` and
    ``bh [3H]``; the three column blocks are the reset, update and
    candidate gates in that order::

        r = sigmoid(x Wxr + bxr + h Whr + bhr)
        z = sigmoid(x Wxz + bxz + h Whz + bhz)
        n = tanh(x Wxn + bxn + r * (h Whn + bhn))
        h' = (1 - z) * n + z * h
    """
    x, h = _as_tensor(x), _as_tensor(h)
    wx, wh = params[prefix + "wx"], params[prefix + "wh"]
    bx, bh = params[prefix + "bx"], params[prefix + "bh"]
    H = wh.shape[0]
    if x.ndim != 2 or h.ndim != 2 or x.shape[1] != wx.shape[0] or h.shape[1] != H or x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_cell got x {x.shape}, h {h.shape} for weights {wx.shape}, {wh.shape}")
    gx = x.data @ wx.data + bx.data
    gh = h.data @ wh.data + bh.data
    r = _sigmoid(gx[:, :H] + gh[:, :H])
    z = _sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
    gh_n = gh[:, 2 * H:]
    n = np.tanh(gx[:, 2 * H:] + r * gh_n)
    out = n + z * (h.data - n)

    def grad(g):
        dn = g * (1.0 - z) * (1.0 - n * n)
        dr = dn * gh_n * r * (1.0 - r)
        dz = g * (h.data - n) * z * (1.0 - z)
        dgx = np.concatenate([dr, dz, dn], axis=1)
        dgh = np.concatenate([dr, dz, dn * r], axis=1)
        return (dgx @ wx.data.T if x.requires_grad else None,
                g * z + dgh @ wh.data.T if h.requires_grad else None,
                x.data.T @ dgx, h.data.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0))

    return _record(out, (x, h, wx, wh, bx, bh), grad)


# -- gradient checking -------------------------------------------------------


def fd_check(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` must recompute a scalar from the current contents of ``params``.
    The relative error of each element uses ``max(|g|, |g_fd|, 1e-8)`` as
    denominator.
    """
    if not eps > 0:
        raise GradientContractError(f"fd_check needs eps > 0, got {eps}")
    first, second = f().item(), f().item()
    if first != second:
        raise GradientContractError("fd_check: f is not deterministic")
    with GradTape(params) as tape:
        loss = f()
    analytic = tape.backward(loss)
    worst = 0.0
    for name, p in params.items():
        p.data = np.array(p.data, dtype=np.float64)  # own a writable contiguous buffer
        flat = p.data.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            est = (up - down) / (2.0 * eps)
            err = abs(est - g[i]) / max(abs(g[i]), abs(est), 1e-8)
            worst = max(worst, err)
    return worst
