"""Small numpy-backed tensor engine with a reverse-mode tape.

Every differentiable op records one entry on the active (thread-local) tape.
``backward`` replays the tape in reverse and accumulates gradients
additively, then clears the tape. Broadcasting is limited to scalar
operands; anything else goes through the explicit ``broadcast_to`` op.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DIV_EPS = 1e-12
LOG_EPS = 1e-30
LEAKY_SLOPE = 0.01

_DTYPES = {"f32": np.float32, "f64": np.float64}


class _State(threading.local):
    def __init__(self):
        self.tape: list[_Node] = []
        self.enabled = True
        self.dtype = np.float32


_state = _State()


def default_dtype():
    return _state.dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default float type ("f32" or "f64")."""
    prev = _state.dtype
    _state.dtype = _DTYPES[name]
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_state.dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(self, o)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return add(neg(self), o)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(self, o)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        raise TypeError("use slice_axis() for differentiable indexing")

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _bad_item(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad=False, name="", dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype or _state.dtype)


# -- tape --------------------------------------------------------------------


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    kind: str


class Tape:
    """View over the thread-local op record; mostly for inspection."""

    @staticmethod
    def nodes() -> list[_Node]:
        return _state.tape

    @staticmethod
    def clear():
        _state.tape = []

    @staticmethod
    def __len__():
        return len(_state.tape)


def _record(kind: str, out_data: np.ndarray, inputs: Sequence[Tensor], bw) -> Tensor:
    need = _state.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=need, dtype=out_data.dtype)
    if need:
        _state.tape.append(_Node(out, tuple(inputs), bw, kind))
    return out


def backward(loss: Tensor):
    """Populate ``.grad`` of every grad-requiring tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        if node.out is not loss and node.out.requires_grad:
            node.out.grad = g if node.out.grad is None else node.out.grad + g
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = inp
    # whatever is left are leaves (never produced by a recorded op)
    for key, g in grads.items():
        t = holders[key]
        t.grad = g.astype(t.dtype, copy=False) if t.grad is None else t.grad + g
    _state.tape = []


# -- elementwise ---------------------------------------------------------------


def _operand(a: Tensor, b):
    if isinstance(b, Tensor):
        if b.shape != a.shape:
            if b.size == 1 and not b.requires_grad:
                return b.data.reshape(()).astype(a.dtype), None
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        return b.data, b
    if np.ndim(b) != 0:
        raise ValueError("non-tensor operand must be a scalar")
    return a.dtype.type(b), None


def _safe_den(b):
    b = np.asarray(b)
    small = np.abs(b) < DIV_EPS
    if not np.any(small):
        return b
    return np.where(small, np.where(b < 0, -DIV_EPS, DIV_EPS), b).astype(b.dtype)


def add(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    ins = (a,) if bt is None else (a, bt)
    return _record("add", a.data + bd, ins, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    ins = (a,) if bt is None else (a, bt)
    return _record("sub", a.data - bd, ins, lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    ad = a.data
    ins = (a,) if bt is None else (a, bt)
    return _record("mul", ad * bd, ins, lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    """a / b with |b| < DIV_EPS replaced by a sign-preserving DIV_EPS."""
    bd, bt = _operand(a, b)
    den = _safe_den(bd)
    ad = a.data
    out = ad / den
    ins = (a,) if bt is None else (a, bt)
    return _record("div", out, ins, lambda g: (g / den, -g * out / den))


def maximum(a: Tensor, b) -> Tensor:
    # ties go to the first operand
    bd, bt = _operand(a, b)
    take_a = a.data >= bd
    ins = (a,) if bt is None else (a, bt)
    return _record("max", np.where(take_a, a.data, bd), ins,
                   lambda g: (g * take_a, g * ~take_a))


def minimum(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    take_a = a.data <= bd
    ins = (a,) if bt is None else (a, bt)
    return _record("min", np.where(take_a, a.data, bd), ins,
                   lambda g: (g * take_a, g * ~take_a))


def power(a: Tensor, p) -> Tensor:
    pd, pt = _operand(a, p)
    ad = a.data
    out = np.power(ad, pd)

    def bw(g):
        ga = g * pd * np.power(ad, pd - 1)
        if pt is None:
            return (ga,)
        return ga, g * out * np.log(np.maximum(ad, LOG_EPS))

    ins = (a,) if pt is None else (a, pt)
    return _record("pow", out, ins, bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Natural log of max(a, LOG_EPS)."""
    x = np.maximum(a.data, LOG_EPS)
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def absolute(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _record("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (a.data >= lo_v) & (a.data <= hi_v)
    out = np.clip(a.data, lo_v, hi_v).astype(a.dtype, copy=False)
    return _record("clamp", out, (a,), lambda g: (g * inside,))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "max": maximum,
           "min": minimum, "pow": power}
_UNARY = {"exp": exp, "log": log, "abs": absolute}


def elementwise(kind: str, a: Tensor, b=None, **kw) -> Tensor:
    if kind in _BINARY:
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "clamp":
        return clamp(a, *(b if b is not None else (kw.get("lo"), kw.get("hi"))))
    raise ValueError(f"unknown elementwise op {kind!r}")


# -- reductions ----------------------------------------------------------------


def _norm_axes(ndim: int, axes) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def _extremum_mask(x: np.ndarray, axes: tuple, use_max: bool) -> np.ndarray:
    """One-hot mask of the first extremal element (row-major over ``axes``)."""
    keep = [d for d in range(x.ndim) if d not in axes]
    perm = keep + list(axes)
    xt = np.transpose(x, perm)
    lead = xt.shape[: len(keep)]
    flat = xt.reshape(lead + (-1,))
    idx = np.argmax(flat, axis=-1) if use_max else np.argmin(flat, axis=-1)
    mask = np.zeros_like(flat, dtype=bool)
    np.put_along_axis(mask, idx[..., None], True, axis=-1)
    mask = mask.reshape(xt.shape)
    return np.transpose(mask, np.argsort(perm))


def reduce(kind: str, a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """sum / mean / max / min over ``axes``.

    max and min send the whole upstream gradient to the first extremal
    element in row-major order over the reduced axes.
    """
    ax = _norm_axes(a.ndim, axes)
    shape = a.shape
    kshape = tuple(1 if d in ax else n for d, n in enumerate(shape))
    count = int(np.prod([shape[d] for d in ax])) if ax else 1

    def expand(g):
        return np.broadcast_to(g.reshape(kshape), shape)

    if kind == "sum":
        out = np.sum(a.data, axis=ax, keepdims=keepdims)
        return _record("sum", np.asarray(out), (a,), lambda g: (expand(g).copy(),))
    if kind == "mean":
        out = np.mean(a.data, axis=ax, keepdims=keepdims)
        return _record("mean", np.asarray(out), (a,),
                       lambda g: ((expand(g) / count).astype(a.dtype),))
    if kind in ("max", "min"):
        mask = _extremum_mask(a.data, ax, kind == "max")
        fn = np.max if kind == "max" else np.min
        out = fn(a.data, axis=ax, keepdims=keepdims)
        return _record(kind, np.asarray(out), (a,), lambda g: (expand(g) * mask,))
    raise ValueError(f"unknown reduction {kind!r}")


def sum_(a, axes=None, keepdims=False):
    return reduce("sum", a, axes, keepdims)


def mean(a, axes=None, keepdims=False):
    return reduce("mean", a, axes, keepdims)


# -- activations -----------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _record("relu", np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _record("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def channel_axis(ndim: int) -> int:
    return ndim - 3 if ndim >= 3 else 0


def softmax(a: Tensor, axis: int) -> Tensor:
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record("softmax", out, (a,), bw)


def activation(kind: str, a: Tensor) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError(f"non-finite input to {kind}")
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "softmax_channel":
        return softmax(a, channel_axis(a.ndim))
    raise ValueError(f"unknown activation {kind!r}")


# -- shape ops -------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, perm) -> Tensor:
    inv = np.argsort(perm)
    return _record("transpose", np.transpose(a.data, perm), (a,),
                   lambda g: (np.transpose(g, inv),))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _norm_axes(a.ndim, axis)[0]
    n = a.shape[axis]
    if not (0 <= start < stop <= n):
        raise IndexError(f"slice [{start}:{stop}] out of range for axis of length {n}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _record("slice", a.data[idx], (a,), bw)


def take(a: Tensor, axis: int, index: int) -> Tensor:
    """Slice one entry along ``axis`` and drop that axis."""
    s = slice_axis(a, axis, index, index + 1)
    shape = list(a.shape)
    del shape[axis % a.ndim]
    return reshape(s, tuple(shape))


def pad_zero(a: Tensor, pads) -> Tensor:
    """Zero padding; ``pads`` is one (before, after) pair per axis."""
    pads = tuple(tuple(p) for p in pads)
    if len(pads) != a.ndim:
        raise ValueError("need one (before, after) pair per axis")
    idx = tuple(slice(b, b + n) for (b, _), n in zip(pads, a.shape))
    return _record("pad", np.pad(a.data, pads), (a,), lambda g: (g[idx],))


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    axis = _norm_axes(ts[0].ndim, axis)[0]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(ts)))

    return _record("concat", np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise ValueError(f"stack needs equal shapes, got {shape} and {t.shape}")

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _record("stack", np.stack([t.data for t in ts], axis=axis), ts, bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Expand size-1 axes of ``a`` to ``shape``; the adjoint sums them back."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ValueError("broadcast_to keeps the rank; reshape first")
    axes = tuple(d for d, (m, n) in enumerate(zip(a.shape, shape)) if m != n)
    for d in axes:
        if a.shape[d] != 1:
            raise ValueError(f"cannot broadcast {a.shape} to {shape}")
    return _record("broadcast", np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (np.sum(g, axis=axes, keepdims=True),))


def shape_op(kind: str, *args, **kw) -> Tensor:
    table = {"concat": concat, "slice": slice_axis, "pad_zero": pad_zero,
             "reshape": reshape, "stack": stack}
    if kind not in table:
        raise ValueError(f"unknown shape op {kind!r}")
    return table[kind](*args, **kw)


# -- convolution -----------------------------------------------------------------


class ConvLayer:
    """Same-padded 2D convolution parameters."""

    def __init__(self, in_ch: int, out_ch: int, kh: int = 3, kw: int | None = None,
                 rng: np.random.Generator | None = None, dtype=None, name: str = "conv"):
        kw = kh if kw is None else kw
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel sizes must be odd for same padding")
        dtype = dtype or _state.dtype
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_ch * kh * kw))
        w = rng.standard_normal((out_ch, in_ch, kh, kw)) * std
        self.weight = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self)


def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    # xp: [N, C, H+kh-1, W+kw-1] -> cols [C*kh*kw, N*H*W]
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, h, w), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = xt[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(c * kh * kw, n * h * w)


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, h, wd)
    out = w.reshape(o, -1) @ cols
    if b is not None:
        out += b[:, None]
    return out.reshape(o, n, h, wd).transpose(1, 0, 2, 3), cols


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Same-padded cross-correlation plus bias on [N, C, H, W]."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects [N,C,H,W], got {x.shape}")
    w, b = layer.weight, layer.bias
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ValueError(f"channel mismatch: input has {c}, layer expects {ci}")
    out, cols = conv2d_raw(x.data, w.data, b.data)
    out = np.ascontiguousarray(out)
    ph, pw = kh // 2, kw // 2

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        gb = g2.sum(axis=1)
        gx = None
        if x.requires_grad:
            gcols = (w.data.reshape(o, -1).T @ g2).reshape(c, kh, kw, n, h, wd)
            gxp = np.zeros((c, n, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, :, dy:dy + h, dx:dx + wd] += gcols[:, dy, dx]
            gx = gxp[:, :, ph:ph + h, pw:pw + wd].transpose(1, 0, 2, 3)
        return gx, gw, gb

    return _record("conv2d", out, (x, w, b), bw)


# -- checks ------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
               max_elems: int | None = None, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between the tape gradient and central differences.

    Non-scalar outputs of ``f`` are summed on both sides.
    ``x`` is perturbed in place, so ``f`` may ignore its argument and read a
    parameter that aliases ``x``. Use 64-bit data.
    """
    base = f(x)
    if not np.all(np.isfinite(base.data)):
        raise FloatingPointError("f(x) is not finite")
    Tape.clear()
    old_flag, old_grad = x.requires_grad, x.grad
    x.requires_grad, x.grad = True, None
    loss = f(x)
    backward(loss if loss.size == 1 else sum_(loss))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.requires_grad, x.grad = old_flag, old_grad

    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_elems is not None and flat.size > max_elems:
        idx = np.sort(np.random.default_rng(seed).choice(flat.size, max_elems, replace=False))
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(np.sum(f(x).data))
            flat[i] = orig - eps
            fm = float(np.sum(f(x).data))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("f(x) is not finite near x")
            num = (fp - fm) / (2 * eps)
            ana = float(analytic.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst


def parameters_of(objs: Iterable) -> list[Tensor]:
    out = []
    for o in objs:
        out.extend(o.parameters())
    return out
