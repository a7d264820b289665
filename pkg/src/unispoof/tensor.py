"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (row-major, float32 or float64).  Every
differentiable operation appends one entry to the active Tape; a single
reverse sweep over the tape populates `.grad` on requires_grad leaves.
float32 is the training dtype, float64 the gradient-checking dtype.

Layout convention: images and feature maps are N x H x W x C.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "GraphError", "MissingGradientError",
    "tensor", "zeros", "ones", "full", "no_grad", "active_tape", "reset_tape",
    "matmul", "linear", "conv2d", "pool2d", "layer_norm", "softmax", "l2_normalize",
    "concat", "backward", "sgd_step", "grad_check", "trunc_normal",
]

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Raised on autodiff misuse: non-scalar loss, detached graph, reused tape."""


class MissingGradientError(RuntimeError):
    """Raised by sgd_step when a parameter has no populated gradient."""


class _Node:
    """One recorded differentiable operation: inputs, output, backward rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn", "tape")

    def __init__(self, op: str, inputs: tuple["Tensor", ...],
                 backward_fn: Callable[[np.ndarray], tuple], tape: "Tape"):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.tape = tape
        self.out: Tensor | None = None


class Tape:
    """Execution-ordered record of differentiable operations.

    Operations are appended in forward order, which is automatically a
    topological order.  `backward` walks the whole tape exactly once in
    reverse; a consumed tape cannot be walked again (re-run the forward
    pass instead).  Tensors created on a consumed tape act as constants
    in later graphs.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


_active_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _active_tape


def reset_tape() -> Tape:
    """Discard the active tape (and its retained graph); start a fresh one."""
    global _active_tape
    _active_tape = Tape()
    return _active_tape


class no_grad:
    """Context manager that disables operation recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, dtype=np.float32, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.dtype.type not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def _wrap(data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        return t

    # -- basic properties --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def to(self, dtype) -> "Tensor":
        """Dtype-cast copy; always a leaf."""
        return Tensor(self.data.astype(dtype), dtype=dtype, requires_grad=self.requires_grad)

    def is_leaf(self) -> bool:
        return self._node is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(_coerce(other, self.dtype), self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(_coerce(other, self.dtype), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return getitem(self, key)

    # -- method sugar --------------------------------------------------------

    def reshape(self, *shape): return reshape(self, shape if len(shape) > 1 else shape[0])
    def transpose(self, *axes): return transpose(self, axes if len(axes) > 1 else axes[0])
    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return tmean(self, axis, keepdims)
    def backward(self, tape: Tape | None = None): return backward(self, tape)


def _raise_scalar(t: Tensor):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.shape}")


def tensor(data, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype, requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), dtype=dtype, requires_grad=requires_grad)


def full(shape, value, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), dtype=dtype, requires_grad=requires_grad)


def trunc_normal(shape, std: float, rng: np.random.Generator,
                 dtype=np.float32, requires_grad: bool = True) -> Tensor:
    """Normal(0, std) truncated to +/- 2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return Tensor(out.astype(dtype), dtype=dtype, requires_grad=requires_grad)


# -- graph plumbing ---------------------------------------------------------


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=dtype), requires_grad=False)


def _record(op: str, data: np.ndarray, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    req = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=req)
    if req:
        node = _Node(op, inputs, backward_fn, _active_tape)
        node.out = out
        out._node = node
        _active_tape.nodes.append(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}; cast explicitly")


# -- elementwise binary ------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a.dtype)
    _check_dtypes("add", a, b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a.dtype)
    _check_dtypes("sub", a, b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a.dtype)
    _check_dtypes("mul", a, b)
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", data, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a.dtype)
    _check_dtypes("div", a, b)
    data = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record("div", data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


# -- elementwise unary -------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _record("exp", data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return _record("sqrt", data, (a,), lambda g: (g / (2.0 * data),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    return _record("relu", data, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _record("sigmoid", data, (a,), lambda g: (g * data * (1.0 - data),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _record("tanh", data, (a,), lambda g: (g * (1.0 - data * data),))


_GELU_C = math.sqrt(2.0 / math.pi)  # tanh-approximation constant
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bwd(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * d,)

    return _record("gelu", data, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes inside the interval."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _record("clip", data, (a,), lambda g: (g * mask,))


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _record("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))
    return _record("transpose", data, (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, key) -> Tensor:
    data = np.ascontiguousarray(a.data[key])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        return (ga,)

    return _record("getitem", data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    _check_dtypes("concat", *tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(tensors)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _record("concat", data, tensors, bwd)


def roll(a: Tensor, shifts, axes) -> Tensor:
    data = np.roll(a.data, shifts, axis=axes)
    neg_shifts = tuple(-s for s in shifts) if isinstance(shifts, (tuple, list)) else -shifts
    return _record("roll", data, (a,), lambda g: (np.roll(g, neg_shifts, axis=axes),))


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather from a 2-D table; backward scatter-adds into the table."""
    idx = np.asarray(indices)
    data = np.ascontiguousarray(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record("embedding_lookup", data, (table,), bwd)


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _record("sum", np.asarray(data, dtype=a.dtype), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.shape[i]
    s = tsum(a, axis, keepdims)
    return mul(s, 1.0 / count)


# -- linear algebra ----------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b): the last axis of x is the feature axis."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    _check_dtypes("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record("matmul", data, (a, b), bwd)


# -- structured ops ----------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NHWC input with a (kh, kw, Cin, Cout) kernel."""
    _check_dtypes("conv2d", x, w, bias)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, h, wi, c = x.shape
    kh, kw, cin, f = w.shape
    if cin != c:
        raise ShapeError(f"conv2d channel mismatch: input {c} vs kernel {cin}")
    if bias.shape != (f,):
        raise ShapeError(f"conv2d bias must have shape ({f},), got {bias.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, wi + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]                      # N, OH, OW, C, kh, kw
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))  # N, OH, OW, kh, kw, C
    cols2 = cols.reshape(n * oh * ow, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, f)
    out = (cols2 @ wmat + bias.data).reshape(n, oh, ow, f)

    def bwd(g):
        g2 = g.reshape(n * oh * ow, f)
        gcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, c)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding:padding + h, padding:padding + wi, :]
        gw = (cols2.T @ g2).reshape(kh, kw, c, f)
        gb = g2.sum(axis=0)
        return np.ascontiguousarray(gx), gw, gb

    return _record("conv2d", out, (x, w, bias), bwd)


def pool2d(x: Tensor, window: int, mode: str = "max") -> Tensor:
    """Non-overlapping window pooling; max ties break to first scan-order index."""
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects 4-d NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"pool window {window} does not divide spatial dims {h}x{w}")
    if mode not in ("max", "avg"):
        raise ValueError(f"pool2d mode must be 'max' or 'avg', got {mode!r}")
    oh, ow = h // window, w // window
    xr = x.data.reshape(n, oh, window, ow, window, c)
    xr = np.ascontiguousarray(xr.transpose(0, 1, 3, 2, 4, 5)).reshape(n, oh, ow, window * window, c)

    if mode == "max":
        out = xr.max(axis=3)
        idx = xr.argmax(axis=3)  # first occurrence wins on ties

        def bwd(g):
            gr = np.zeros_like(xr)
            np.put_along_axis(gr, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
            gr = gr.reshape(n, oh, ow, window, window, c).transpose(0, 1, 3, 2, 4, 5)
            return (np.ascontiguousarray(gr.reshape(n, h, w, c)),)
    else:
        out = xr.mean(axis=3)

        def bwd(g):
            gr = np.broadcast_to(g[:, :, :, None, :] / (window * window),
                                 (n, oh, ow, window * window, c))
            gr = gr.reshape(n, oh, ow, window, window, c).transpose(0, 1, 3, 2, 4, 5)
            return (np.ascontiguousarray(gr.reshape(n, h, w, c)).astype(x.dtype),)

    return _record("pool2d", np.ascontiguousarray(out), (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then scale and shift."""
    _check_dtypes("layer_norm", x, gamma, beta)
    d = x.shape[-1]
    if d <= 0 or eps <= 0:
        raise ValueError(f"layer_norm needs D > 0 and eps > 0, got D={d}, eps={eps}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm gamma/beta must be ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = xh * gamma.data + beta.data

    def bwd(g):
        red = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=red)
        ggamma = (g * xh).sum(axis=red)
        gxh = g * gamma.data
        gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                    - xh * (gxh * xh).mean(axis=-1, keepdims=True))
        return gx.astype(x.dtype), ggamma.astype(x.dtype), gbeta.astype(x.dtype)

    return _record("layer_norm", out.astype(x.dtype), (x, gamma, beta), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along one axis."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _record("softmax", data, (x,), bwd)


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """v / max(||v||_2, eps) along the last axis."""
    norm = np.sqrt((v.data * v.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    data = v.data / denom

    def bwd(g):
        live = norm > eps  # where the norm (not eps) is the active branch
        dot = (g * data).sum(axis=-1, keepdims=True)
        gv = np.where(live, (g - data * dot) / denom, g / eps)
        return (gv.astype(v.dtype),)

    return _record("l2_normalize", data, (v,), bwd)


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Reverse-sweep the tape, accumulating grads into requires_grad leaves.

    Walks every recorded operation exactly once in reverse execution
    order.  requires_grad leaves that feed the tape but lie off the path
    to `loss` receive zero gradients.  A second sweep of the same tape
    raises GraphError; re-run the forward pass first.
    """
    global _active_tape
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss._node is None:
        raise GraphError("loss is detached from the graph (no recorded operations)")
    t = tape if tape is not None else loss._node.tape
    if t.consumed:
        raise GraphError("tape already consumed by a previous backward; re-run forward")
    if loss._node.tape is not t:
        raise GraphError("loss was not recorded on the given tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_acc: dict[int, tuple[Tensor, np.ndarray | None]] = {}

    for node in reversed(t.nodes):
        for inp in node.inputs:
            if inp.requires_grad and inp._node is None and id(inp) not in leaf_acc:
                leaf_acc[id(inp)] = (inp, None)
        g = pending.pop(id(node.out), None)
        if g is None:
            continue  # off the path to loss; inputs keep zero contribution
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp._node is None:
                prev = leaf_acc[id(inp)][1]
                leaf_acc[id(inp)] = (inp, ig if prev is None else prev + ig)
            else:
                key = id(inp)
                pending[key] = ig if key not in pending else pending[key] + ig

    for tens, acc in leaf_acc.values():
        contrib = acc if acc is not None else np.zeros_like(tens.data)
        tens.grad = contrib if tens.grad is None else tens.grad + contrib

    t.consumed = True
    t.nodes.clear()  # free the retained graph
    if t is _active_tape:
        _active_tape = Tape()


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place SGD update p <- p - lr * grad, then clear gradients."""
    plist = list(params)
    missing = [i for i, p in enumerate(plist) if p.grad is None]
    if missing:
        raise MissingGradientError(
            f"sgd_step: parameters at positions {missing} have no gradient; run backward first")
    for p in plist:
        p.data -= (lr * p.grad).astype(p.dtype)
        p.grad = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- gradient checking -------------------------------------------------------


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
               max_coords_per_input: int | None = None, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    `fn(*inputs)` must return a scalar Tensor; inputs should be float64.
    Large inputs can be spot-checked by sampling coordinates.
    """
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, an in zip(inputs, analytic):
            if not t.requires_grad:
                continue
            if an is None:
                an = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            n = flat.size
            if max_coords_per_input is not None and n > max_coords_per_input:
                coords = rng.choice(n, size=max_coords_per_input, replace=False)
            else:
                coords = range(n)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                f_plus = fn(*inputs).item()
                flat[i] = orig - step
                f_minus = fn(*inputs).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = an.reshape(-1)[i]
                scale = max(abs(a), abs(numeric), 1e-8)
                err = abs(a - numeric) / scale
                if abs(a) < 1e-10 and abs(numeric) < 1e-10:
                    err = 0.0
                worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
