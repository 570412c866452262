"""Dense channel-last tensors and reverse-mode differentiation over a recorded tape.

All forward primitives are pure functions on immutable tensors.  When a Tape is
active (``with Tape() as tape:``), every primitive application is recorded so the
adjoint pass can later walk the records in reverse order.  Layout is row-major
with channel-last feature maps [h, w, d]; most primitives also accept one or more
leading batch axes.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5

_TAPE_STACK: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when operand extents are inconsistent with an operation."""


class TapeError(RuntimeError):
    """Raised when the adjoint pass is asked for a value the tape never produced."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routed through the recorded primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Node:
    __slots__ = ("op", "inputs", "out", "backward_fn", "recompute_fn")

    def __init__(self, op, inputs, out, backward_fn, recompute_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.recompute_fn = recompute_fn


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def replay(self):
        """Re-run every recorded forward computation in order.

        Outputs are recomputed from the (possibly updated) input tensors and
        written back in place.  With unchanged inputs the result is bit-exact.
        """
        for node in self.nodes:
            node.out.data = node.recompute_fn()


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op, out_data, inputs, backward_fn, recompute_fn):
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if _TAPE_STACK:
        _TAPE_STACK[-1].nodes.append(Node(op, tuple(inputs), out, backward_fn, recompute_fn))
    return out


def backward(loss, tape):
    """Adjoint pass: gradients of a scalar tape output w.r.t. requires_grad leaves.

    Visits nodes in strict reverse recording order (reverse topological order by
    construction).  Returns {leaf Tensor: gradient array} and also sets ``.grad``.
    """
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    produced = {id(n.out) for n in tape.nodes}
    if id(loss) not in produced:
        raise TapeError("loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = t

    result = {}
    for key, g in grads.items():
        t = holders[key]
        t.grad = g
        result[t] = g
    return result


def _unbroadcast(g, shape):
    """Sum a gradient over axes that were broadcast in the forward direction."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", out, (a, b), bw, lambda: a.data + b.data)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", out, (a, b), bw, lambda: a.data - b.data)


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", out, (a, b), bw, lambda: a.data * b.data)


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _record("div", out, (a, b), bw, lambda: a.data / b.data)


def neg(a):
    return _record("neg", -a.data, (a,), lambda g: (-g,), lambda: -a.data)


def sqrt(a):
    out = np.sqrt(a.data)

    def bw(g):
        return (g * (0.5 / out),)

    return _record("sqrt", out, (a,), bw, lambda: np.sqrt(a.data))


def square(a):
    ad = a.data
    return _record("square", ad * ad, (a,), lambda g: (g * (2.0 * ad),), lambda: a.data * a.data)


def _gelu_grad(x, phi):
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return phi + x * pdf


def gelu(a):
    """Exact-erf Gaussian error linear unit, x * Phi(x)."""
    ad = a.data
    phi = 0.5 * (1.0 + erf(ad / np.sqrt(2.0)))
    out = ad * phi

    def bw(g):
        return (g * _gelu_grad(ad, phi),)

    return _record("gelu", out, (a,), bw,
                   lambda: a.data * (0.5 * (1.0 + erf(a.data / np.sqrt(2.0)))))


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (a,), bw, lambda: 1.0 / (1.0 + np.exp(-a.data)))


def leaky_relu(a, slope=0.2):
    ad = a.data
    out = np.where(ad >= 0, ad, slope * ad)

    def bw(g):
        return (g * np.where(ad >= 0, 1.0, slope).astype(ad.dtype),)

    return _record("leaky_relu", out, (a,), bw,
                   lambda: np.where(a.data >= 0, a.data, slope * a.data))


# ---------------------------------------------------------------------------
# reductions and rearrangements


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record("sum", out, (a,), bw, lambda: a.data.sum(axis=axis, keepdims=keepdims))


def tmean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / denom, a.data.shape).copy(),)
        gg = g / denom
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record("mean", out, (a,), bw, lambda: a.data.mean(axis=axis, keepdims=keepdims))


def reshape(a, shape):
    shape = tuple(shape)
    src = a.data.shape
    return _record("reshape", a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(src),), lambda: a.data.reshape(shape))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record("transpose", a.data.transpose(axes), (a,),
                   lambda g: (g.transpose(inv),), lambda: a.data.transpose(axes))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(tensors), bw,
                   lambda: np.concatenate([t.data for t in tensors], axis=axis))


def einsum(subscripts, a, b):
    """Two-operand einsum with the transposed-subscript gradient rule.

    Every index of each operand must appear in the output or in the other
    operand (no forward-summed singleton indices), which holds for all uses
    in this package.
    """
    in_subs, out_sub = subscripts.split("->")
    sa, sb = in_subs.split(",")
    for sub, other in ((sa, sb), ((sb, sa))):
        for ch in sub.replace("...", ""):
            if ch not in out_sub and ch not in other:
                raise ShapeError(f"einsum '{subscripts}': index '{ch}' is not differentiable here")
    out = np.einsum(subscripts, a.data, b.data)

    def grad_for(my_sub, my_shape, other_sub, other_data, g):
        if "..." in my_sub:
            return np.einsum(f"{out_sub},{other_sub}->{my_sub}", g, other_data)
        res = np.einsum(f"{out_sub},{other_sub}->...{my_sub}", g, other_data)
        extra = res.ndim - len(my_shape)
        if extra:
            res = res.sum(axis=tuple(range(extra)))
        return res

    def bw(g):
        ga = grad_for(sa, a.data.shape, sb, b.data, g)
        gb = grad_for(sb, b.data.shape, sa, a.data, g)
        return ga, gb

    return _record("einsum:" + subscripts, out, (a, b), bw,
                   lambda: np.einsum(subscripts, a.data, b.data))


def matmul(a, b):
    return einsum("ij,jk->ik", a, b)


# ---------------------------------------------------------------------------
# normalization and attention support


def softmax(a, axis=-1):
    """Numerically stabilized softmax: subtracts the axis max before exp."""
    def f(x):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    out = f(a.data)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (a,), bw, lambda: f(a.data))


def layer_norm(a, gain, shift):
    """Normalize each last-axis slice to mean 0 / variance 1, then affine."""
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeError(f"layer_norm affine must have shape ({d},), got "
                         f"{gain.data.shape} / {shift.data.shape}")

    def f(x, gn, sh):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + LN_EPS) * gn + sh

    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    out = xhat * gain.data + shift.data

    def bw(g):
        sum_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=sum_axes)
        dshift = g.sum(axis=sum_axes)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dshift

    return _record("layer_norm", out, (a, gain, shift), bw,
                   lambda: f(a.data, gain.data, shift.data))


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weights, bias, stride=1, pad=0):
    """Cross-correlation with zero padding; channel-last [.., h, w, c_in].

    Weights are [k, k, c_in, c_out].  Requires k odd or stride == k, and
    (h + 2 pad - k) divisible by stride.
    """
    wd = weights.data
    if wd.ndim != 4 or wd.shape[0] != wd.shape[1]:
        raise ShapeError(f"conv2d weights must be [k,k,c_in,c_out], got {wd.shape}")
    k, _, c_in, c_out = wd.shape
    if x.data.ndim < 3:
        raise ShapeError(f"conv2d input must be at least [h,w,c], got {x.data.shape}")
    h, w, cx = x.data.shape[-3:]
    if cx != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {cx}, weights expect {c_in}")
    if k % 2 == 0 and stride != k:
        raise ShapeError(f"conv2d requires odd kernel or stride==kernel, got k={k}, stride={stride}")
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        raise ShapeError(f"conv2d extents {h}x{w} with k={k}, pad={pad} not divisible by stride={stride}")
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},), got {bias.data.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    lead = x.data.shape[:-3]

    def im2col(xd):
        pw = [(0, 0)] * len(lead) + [(pad, pad), (pad, pad), (0, 0)]
        xp = np.pad(xd, pw)
        cols = np.empty(lead + (ho, wo, k, k, c_in), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                cols[..., i, j, :] = xp[..., i:i + ho * stride:stride, j:j + wo * stride:stride, :]
        return cols

    cols = im2col(x.data)
    out = np.tensordot(cols, wd, axes=([-3, -2, -1], [0, 1, 2])) + bias.data

    def bw(g):
        nb = len(lead)
        dw = np.tensordot(cols, g, axes=(list(range(nb + 2)), list(range(nb + 2))))
        db = g.sum(axis=tuple(range(nb + 2)))
        dcols = np.tensordot(g, wd, axes=([-1], [3]))
        dxp = np.zeros(lead + (h + 2 * pad, w + 2 * pad, c_in), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[..., i:i + ho * stride:stride, j:j + wo * stride:stride, :] += dcols[..., i, j, :]
        if pad:
            dxp = dxp[..., pad:-pad, pad:-pad, :]
        return dxp, dw, db

    def recompute():
        return np.tensordot(im2col(x.data), weights.data,
                            axes=([-3, -2, -1], [0, 1, 2])) + bias.data

    return _record("conv2d", out, (x, weights, bias), bw, recompute)


# ---------------------------------------------------------------------------
# patch tokenization and pixel shuffle


def unfold(x, p):
    """Non-overlapping p x p patches -> [.., N, d p^2]; exact inverse of fold.

    Patches are in row-major patch order; within a patch the flattening runs
    row, then column, then channel.
    """
    h, w, d = x.shape[-3:]
    if h % p or w % p:
        raise ShapeError(f"unfold: extents h={h}, w={w} not divisible by p={p}")
    lead = x.shape[:-3]
    nb = len(lead)
    y = reshape(x, lead + (h // p, p, w // p, p, d))
    perm = tuple(range(nb)) + (nb, nb + 2, nb + 1, nb + 3, nb + 4)
    y = transpose(y, perm)
    return reshape(y, lead + ((h // p) * (w // p), p * p * d))


def fold(tokens, p, h, w):
    """Inverse of unfold: [.., N, d p^2] -> [.., h, w, d]."""
    n, dp2 = tokens.shape[-2:]
    if h % p or w % p or n != (h // p) * (w // p):
        raise ShapeError(f"fold: N={n} inconsistent with h={h}, w={w}, p={p}")
    if dp2 % (p * p):
        raise ShapeError(f"fold: token width {dp2} not divisible by p^2={p * p}")
    d = dp2 // (p * p)
    lead = tokens.shape[:-2]
    nb = len(lead)
    y = reshape(tokens, lead + (h // p, w // p, p, p, d))
    perm = tuple(range(nb)) + (nb, nb + 2, nb + 1, nb + 3, nb + 4)
    y = transpose(y, perm)
    return reshape(y, lead + (h, w, d))


def pixel_shuffle(x, r):
    """[.., h, w, d r^2] -> [.., r h, r w, d]; channel c r^2 + dy r + dx goes to (r y + dy, r x + dx, c)."""
    h, w, c = x.shape[-3:]
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    d = c // (r * r)
    lead = x.shape[:-3]
    nb = len(lead)
    y = reshape(x, lead + (h, w, d, r, r))
    perm = tuple(range(nb)) + (nb, nb + 3, nb + 1, nb + 4, nb + 2)
    y = transpose(y, perm)
    return reshape(y, lead + (r * h, r * w, d))


def take0(x, i):
    """Select index i along axis 0."""
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"take0: index {i} out of range for extent {x.shape[0]}")

    def bw(g):
        ig = np.zeros_like(x.data)
        ig[i] = g
        return (ig,)

    return _record("take0", x.data[i], (x,), bw, lambda: x.data[i])


def forward_diff(x, axis):
    """Forward difference along an axis with replicate boundary (last slice = 0)."""
    def f(a):
        d = np.zeros_like(a)
        src = [slice(None)] * a.ndim
        dst = [slice(None)] * a.ndim
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
        d[tuple(dst)] = a[tuple(src)] - a[tuple(dst)]
        return d

    out = f(x.data)

    def bw(g):
        ig = np.zeros_like(g)
        src = [slice(None)] * g.ndim
        dst = [slice(None)] * g.ndim
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
        ig[tuple(src)] += g[tuple(dst)]
        ig[tuple(dst)] -= g[tuple(dst)]
        return (ig,)

    return _record("forward_diff", out, (x,), bw, lambda: f(x.data))
