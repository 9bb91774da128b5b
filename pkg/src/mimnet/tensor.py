"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies storage and vectorized arithmetic; this module owns the
operation graph, the backward rules, and the numerical contracts the rest
of the package relies on: row-major contiguous layout, deterministic
evaluation order, finite-value checking, and an operation counter used by
the complexity report.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf while debug checks were active."""


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# --------------------------------------------------------------------------
# global switches

_grad_enabled = True
_debug_checks = True


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every forward op (on by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


@contextmanager
def no_grad():
    """Disable graph recording inside the block (eval / optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def dtype_for(precision: str) -> np.dtype:
    """Map a precision mode name ('single' | 'double') to a numpy dtype."""
    if precision == "single":
        return np.dtype(np.float32)
    if precision == "double":
        return np.dtype(np.float64)
    raise ValueError(f"unknown precision mode: {precision!r}")


# --------------------------------------------------------------------------
# operation counting (consumed by the complexity module)

class FlopCounter:
    """Accumulates per-section, per-category operation counts."""

    def __init__(self):
        self.records: dict[str, dict[str, float]] = {}
        self.section_stack: list[str] = ["model"]
        self.suppress_depth = 0

    def add(self, category: str, count: float) -> None:
        if self.suppress_depth > 0:
            return
        section = self.section_stack[-1]
        bucket = self.records.setdefault(section, {})
        bucket[category] = bucket.get(category, 0.0) + float(count)

    def total(self, sections=None) -> float:
        if sections is None:
            sections = self.records.keys()
        return sum(sum(cats.values()) for s, cats in self.records.items() if s in set(sections))


_flop_counter: FlopCounter | None = None


@contextmanager
def use_flop_counter(counter: FlopCounter):
    global _flop_counter
    prev = _flop_counter
    _flop_counter = counter
    try:
        yield counter
    finally:
        _flop_counter = prev


def record_flops(category: str, count: float) -> None:
    if _flop_counter is not None:
        _flop_counter.add(category, count)


@contextmanager
def flops_section(name: str):
    if _flop_counter is None:
        yield
        return
    _flop_counter.section_stack.append(name)
    try:
        yield
    finally:
        _flop_counter.section_stack.pop()


@contextmanager
def flops_suppressed():
    """Hide internal ops of a composite whose cost is recorded as one unit."""
    if _flop_counter is None:
        yield
        return
    _flop_counter.suppress_depth += 1
    try:
        yield
    finally:
        _flop_counter.suppress_depth -= 1


# --------------------------------------------------------------------------
# the tensor

class Tensor:
    """A dense n-dimensional float array node in the autodiff graph.

    ``data`` is always a C-contiguous numpy float array.  ``grad`` is filled
    by :func:`backward` with an array of the same shape (``None`` means a
    zero gradient, e.g. for parameters disconnected from the loss).
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection ------------------------------------------------------

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient plumbing --------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor; collected by the module system."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def grad_of(t: Tensor) -> np.ndarray:
    """Gradient array of ``t``; zeros when disconnected from the loss."""
    if t.grad is None:
        return np.zeros_like(t.data)
    return t.grad


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """Wrap a forward result into a graph node (or a constant under no_grad)."""
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor in the graph.

    The loss must be scalar.  Traversal order is a deterministic reverse
    topological order of the recorded graph.
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# --------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data
    record_flops("elementwise", data.size)

    def bwd(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bwd, "add")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data
    record_flops("elementwise", data.size)

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data / b.data
    record_flops("elementwise", data.size)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _make(-a.data, (a,), bwd, "neg")


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    record_flops("elementwise", data.size)

    def bwd(g):
        return (g * data,)

    return _make(data, (a,), bwd, "exp")


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)
    record_flops("elementwise", data.size)

    def bwd(g):
        return (g / a.data,)

    return _make(data, (a,), bwd, "log")


# --------------------------------------------------------------------------
# activations

def sigmoid(a: Tensor) -> Tensor:
    data = expit(a.data)
    record_flops("norm_act", 5 * data.size)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bwd, "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = expit(a.data)
    data = a.data * s
    record_flops("norm_act", 5 * data.size)

    def bwd(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _make(data, (a,), bwd, "silu")


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GeLU: x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * cdf
    record_flops("norm_act", 5 * data.size)

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return _make(data, (a,), bwd, "gelu")


def softplus(a: Tensor) -> Tensor:
    data = np.logaddexp(0.0, a.data)
    record_flops("norm_act", 5 * data.size)

    def bwd(g):
        return (g * expit(a.data),)

    return _make(data, (a,), bwd, "softplus")


def activation(kind: str, x: Tensor) -> Tensor:
    """Dispatch by name; kinds: gelu, silu, softplus, sigmoid."""
    try:
        fn = {"gelu": gelu, "silu": silu, "softplus": softplus, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
    return fn(x)


# --------------------------------------------------------------------------
# reductions

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    record_flops("elementwise", a.size)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).copy(),)
        g2 = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.ndim for ax in axes)
            for ax in sorted(axes):
                g2 = np.expand_dims(g2, ax)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _make(np.asarray(data), (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax % a.ndim]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), bwd, "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(data, (a,), bwd, "permute")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (int/slice/ellipsis) indexing; fancy indexing is not supported."""
    data = np.ascontiguousarray(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(data, (a,), bwd, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(outs)

    return _make(data, tuple(tensors), bwd, "concat")


def split(a: Tensor, sizes, axis: int = -1):
    """Split along ``axis`` into chunks of the given sizes."""
    axis = axis % a.ndim
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover extent {a.shape[axis]}")
    outs = []
    start = 0
    for s in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(start, start + s)
        outs.append(getitem(a, tuple(sl)))
        start += s
    return tuple(outs)


def permute_rows(a: Tensor, perm: np.ndarray, axis: int = 1) -> Tensor:
    """Reorder ``a`` along ``axis`` by a permutation (a bijective index array)."""
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != a.shape[axis]:
        raise ShapeError(f"permutation of length {perm.shape} does not fit axis {axis} of {a.shape}")
    data = np.ascontiguousarray(np.take(a.data, perm, axis=axis))
    inv = np.argsort(perm)

    def bwd(g):
        return (np.ascontiguousarray(np.take(g, inv, axis=axis)),)

    return _make(data, (a,), bwd, "permute_rows")


# --------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)
    if a.ndim >= 2 and b.ndim >= 2:
        record_flops("matmul", 2 * data.size * a.shape[-1])

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), bwd, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight.T + bias along the last axis; weight is [out, in]."""
    n_in = weight.shape[1]
    if x.shape[-1] != n_in:
        raise ShapeError(f"linear: input extent {x.shape[-1]} != weight in-extent {n_in}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, n_in)
    y2 = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        y2 = y2 + bias.data
    record_flops("linear", 2 * x2.shape[0] * n_in * weight.shape[0])
    data = y2.reshape(*lead, weight.shape[0])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(data, parents, bwd, "linear")


# --------------------------------------------------------------------------
# convolutions

def _conv_out_extent(extent: int, k: int, stride: int, padding: int) -> int:
    span = extent + 2 * padding - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded input extent {extent + 2 * padding}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation.  x: [B,C,H,W], weight: [F, C/groups, kh, kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4D input and kernel")
    bsz, cin, h, w = x.shape
    f, cg, kh, kw = weight.shape
    if kh < 1 or kw < 1:
        raise ShapeError("conv2d kernel extents must be >= 1")
    if cin % groups != 0 or f % groups != 0:
        raise ShapeError(f"channels {cin}/{f} not divisible by groups {groups}")
    if cg != cin // groups:
        raise ShapeError(f"kernel channel extent {cg} != {cin}//{groups}")
    oh = _conv_out_extent(h, kh, stride, padding)
    ow = _conv_out_extent(w, kw, stride, padding)
    record_flops("conv", 2 * bsz * f * oh * ow * cg * kh * kw)

    if kh == 1 and kw == 1 and groups == 1 and padding == 0:
        return _conv2d_1x1(x, weight, stride, oh, ow)
    if groups == cin and cg == 1:
        return _conv2d_depthwise(x, weight, stride, padding, oh, ow)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # [B, C, OH, OW, kh, kw] strided view of every receptive field
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]

    if groups == 1:
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            bsz * oh * ow, cin * kh * kw)
        w2 = weight.data.reshape(f, cin * kh * kw)
        data = (cols @ w2.T).reshape(bsz, oh, ow, f).transpose(0, 3, 1, 2)
        data = np.ascontiguousarray(data)

        def bwd(g):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * oh * ow, f)
            gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
            gx = None
            if x.requires_grad:
                gcols = (g2 @ w2).reshape(bsz, oh, ow, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, :, :, i, j]
                if padding:
                    gxp = gxp[:, :, padding:padding + h, padding:padding + w]
                gx = np.ascontiguousarray(gxp)
            return gx, gw

        return _make(data, (x, weight), bwd, "conv2d")

    cols = win.reshape(bsz, groups, cg, oh, ow, kh, kw)
    wg = weight.data.reshape(groups, f // groups, cg, kh, kw)
    data = np.einsum("bgchwij,gfcij->bgfhw", cols, wg, optimize=True)
    data = np.ascontiguousarray(data.reshape(bsz, f, oh, ow))

    def bwd(g):
        gg = g.reshape(bsz, groups, f // groups, oh, ow)
        gw = np.einsum("bgchwij,bgfhw->gfcij", cols, gg, optimize=True)
        gx = None
        if x.requires_grad:
            gcols = np.einsum("gfcij,bgfhw->bgchwij", wg, gg, optimize=True)
            gcols = gcols.reshape(bsz, cin, oh, ow, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, :, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gxp)
        return gx, gw.reshape(weight.shape)

    return _make(data, (x, weight), bwd, "conv2d")


def _conv2d_1x1(x: Tensor, weight: Tensor, stride: int, oh: int, ow: int) -> Tensor:
    """Pointwise conv as a matmul over positions."""
    bsz, cin, h, w = x.shape
    f = weight.shape[0]
    xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
    x2 = xs.transpose(0, 2, 3, 1).reshape(-1, cin)
    w2 = weight.data.reshape(f, cin)
    data = np.ascontiguousarray((x2 @ w2.T).reshape(bsz, oh, ow, f).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (g2.T @ x2).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gxs = (g2 @ w2).reshape(bsz, oh, ow, cin).transpose(0, 3, 1, 2)
            if stride > 1:
                gx = np.zeros_like(x.data)
                gx[:, :, ::stride, ::stride] = gxs
            else:
                gx = np.ascontiguousarray(gxs)
        return gx, gw

    return _make(data, (x, weight), bwd, "conv2d")


def _conv2d_depthwise(x: Tensor, weight: Tensor, stride: int, padding: int,
                      oh: int, ow: int) -> Tensor:
    """One filter per channel: accumulate the k*k taps directly."""
    bsz, cin, h, w = x.shape
    _, _, kh, kw = weight.shape
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    data = np.zeros((bsz, cin, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            data += xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] \
                * weight.data[None, :, 0, i, j, None, None]

    def bwd(g):
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
                gw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
                if gxp is not None:
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        g * weight.data[None, :, 0, i, j, None, None]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw

    return _make(data, (x, weight), bwd, "conv2d")


def transposed_conv2d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Transposed 2D convolution (no padding).  x: [B,C,H,W], weight: [C,F,kh,kw].

    Output spatial extent is stride*(in-1) + k.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("transposed_conv2d expects 4D input and kernel")
    if stride < 1:
        raise ShapeError("transposed_conv2d stride must be >= 1")
    bsz, cin, h, w = x.shape
    ck, f, kh, kw = weight.shape
    if ck != cin:
        raise ShapeError(f"kernel in-channels {ck} != input channels {cin}")
    oh = stride * (h - 1) + kh
    ow = stride * (w - 1) + kw
    data = np.zeros((bsz, f, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            tap = np.einsum("bchw,cf->bfhw", x.data, weight.data[:, :, i, j], optimize=True)
            data[:, :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride] += tap
    record_flops("conv", 2 * bsz * cin * f * h * w * kh * kw)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gtap = g[:, :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride]
                gx += np.einsum("bfhw,cf->bchw", gtap, weight.data[:, :, i, j], optimize=True)
                gw[:, :, i, j] = np.einsum("bchw,bfhw->cf", x.data, gtap, optimize=True)
        return gx, gw

    return _make(data, (x, weight), bwd, "transposed_conv2d")


# --------------------------------------------------------------------------
# normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis per position."""
    if eps <= 0:
        raise ShapeError("layer_norm eps must be > 0")
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over a zero-size axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    data = xhat * gamma.data + beta.data
    record_flops("norm_act", 5 * data.size)

    def bwd(g):
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        gxhat = g * gamma.data
        gx = ivar * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _make(data, (x, gamma, beta), bwd, "layer_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean=None, running_var=None,
               training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize [B,C,H,W] over batch+spatial per channel.

    In training mode the batch statistics are used and, when running buffers
    are supplied, updated in place as (1-momentum)*old + momentum*new.  In
    eval mode the running buffers are used as constants.
    """
    if eps <= 0:
        raise ShapeError("batch_norm eps must be > 0")
    if x.ndim != 4:
        raise ShapeError("batch_norm expects [B,C,H,W]")
    bsz, c, h, w = x.shape
    m = bsz * h * w
    if m == 0:
        raise ShapeError("batch_norm over a zero-size axis")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=axes)
        if running_mean is not None:
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mu
            running_var *= (1.0 - momentum)
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("batch_norm eval mode requires running statistics")
        mu = running_mean
        xc = x.data - mu[None, :, None, None]
        var = running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar[None, :, None, None]
    data = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    record_flops("norm_act", 5 * data.size)

    if training:
        def bwd(g):
            ggamma = (g * xhat).sum(axis=axes)
            gbeta = g.sum(axis=axes)
            gxhat = g * gamma.data[None, :, None, None]
            t1 = gxhat.sum(axis=axes) / m
            t2 = (gxhat * xhat).sum(axis=axes) / m
            gx = ivar[None, :, None, None] * (gxhat - t1[None, :, None, None]
                                              - xhat * t2[None, :, None, None])
            return gx, ggamma, gbeta
    else:
        def bwd(g):
            ggamma = (g * xhat).sum(axis=axes)
            gbeta = g.sum(axis=axes)
            gx = g * (gamma.data * ivar)[None, :, None, None]
            return gx, ggamma, gbeta

    return _make(data, (x, gamma, beta), bwd, "batch_norm")


def norm(x: Tensor, kind: str, gamma: Tensor, beta: Tensor, eps: float = 1e-5, **kwargs) -> Tensor:
    """Dispatch by kind: 'layer' or 'batch' (see the specific functions)."""
    if kind == "layer":
        return layer_norm(x, gamma, beta, eps=eps)
    if kind == "batch":
        return batch_norm(x, gamma, beta, eps=eps, **kwargs)
    raise ValueError(f"unknown norm kind: {kind!r}")


# --------------------------------------------------------------------------
# interpolation

def bilinear_interpolate(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Resize [B,C,h,w] to [B,C,H,W] by bilinear interpolation (half-pixel centers)."""
    if x.ndim != 4:
        raise ShapeError("bilinear_interpolate expects [B,C,h,w]")
    bsz, c, h, w = x.shape
    oh, ow = size

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    i0, i1, fi = axis_weights(h, oh)
    j0, j1, fj = axis_weights(w, ow)
    wi0, wi1 = (1.0 - fi)[:, None], fi[:, None]
    wj0, wj1 = (1.0 - fj)[None, :], fj[None, :]
    data = (x.data[:, :, i0[:, None], j0[None, :]] * (wi0 * wj0)
            + x.data[:, :, i0[:, None], j1[None, :]] * (wi0 * wj1)
            + x.data[:, :, i1[:, None], j0[None, :]] * (wi1 * wj0)
            + x.data[:, :, i1[:, None], j1[None, :]] * (wi1 * wj1))
    data = data.astype(x.dtype, copy=False)
    record_flops("other", 8 * data.size)

    def bwd(g):
        gx = np.zeros_like(x.data)
        for ii, jj, wgt in ((i0, j0, wi0 * wj0), (i0, j1, wi0 * wj1),
                            (i1, j0, wi1 * wj0), (i1, j1, wi1 * wj1)):
            np.add.at(gx, (slice(None), slice(None), ii[:, None], jj[None, :]), g * wgt)
        return (gx,)

    return _make(data, (x,), bwd, "bilinear_interpolate")


# --------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err <= self.tol for e in self.entries)

    def failures(self):
        return [e for e in self.entries if e.max_rel_err > self.tol]


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def grad_check(fn, params, tol: float = 1e-4, eps: float = 1e-5,
               max_entries: int = 8, seed: int = 0, names=None) -> GradCheckReport:
    """Compare autodiff gradients of ``fn() -> scalar`` against central differences.

    All parameters must be double precision.  For parameters larger than
    ``max_entries`` a deterministic random subset of entries is probed.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("grad_check requires double precision parameters")
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    ad_grads = [grad_of(p).copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for p, g_ad, name in zip(params, ad_grads, names):
        flat = p.data.reshape(-1)
        if flat.size <= max_entries:
            idxs = np.arange(flat.size)
        else:
            idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        with no_grad():
            for k in idxs:
                orig = flat[k]
                flat[k] = orig + eps
                f_plus = fn().item()
                flat[k] = orig - eps
                f_minus = fn().item()
                flat[k] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                worst = max(worst, _rel_err(float(g_ad.reshape(-1)[k]), fd))
        report.entries.append(GradCheckEntry(name=name, max_rel_err=worst, checked=len(idxs)))
    return report
