"""Differentiable operations on :class:`Tensor`.

Every op validates shapes eagerly, computes its output with numpy, and (when
any input requires grad and grad mode is on) attaches a closure returning one
gradient per parent. Binary ops never broadcast, except that a single-element
tensor may scale another tensor in ``mul``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, DimensionError, UsageError
from .tensor import Tensor, grad_enabled

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _check_same(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None, scalar: Optional[float] = None) -> Tensor:
    """Apply an elementwise kernel.

    ``kind`` is one of ``add, sub, mul, div`` (binary, identical shapes; ``mul``
    also accepts a single-element ``b`` as a scalar factor), ``sigmoid, gelu,
    relu, log, abs`` (unary) or ``scale, shift, pow`` (with ``scalar``).
    """
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise UsageError(f"{kind} needs two operands")
        if kind == "mul" and b.size == 1 and a.shape != b.shape:
            return _scalar_mul(a, b)
        _check_same(a, b, kind)
        return _BINARY[kind](a, b)
    if kind in ("scale", "shift", "pow"):
        if scalar is None:
            raise UsageError(f"{kind} needs a scalar argument")
        return _SCALAR[kind](a, float(scalar))
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise UsageError(f"unknown elementwise kind {kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("div", a, b)


def sigmoid(a: Tensor) -> Tensor:
    return elementwise("sigmoid", a)


def gelu(a: Tensor) -> Tensor:
    return elementwise("gelu", a)


def relu(a: Tensor) -> Tensor:
    return elementwise("relu", a)


def log(a: Tensor) -> Tensor:
    return elementwise("log", a)


def absolute(a: Tensor) -> Tensor:
    return elementwise("abs", a)


def scale(a: Tensor, s: float) -> Tensor:
    return elementwise("scale", a, scalar=s)


def shift(a: Tensor, s: float) -> Tensor:
    return elementwise("shift", a, scalar=s)


def power(a: Tensor, exponent: float) -> Tensor:
    return elementwise("pow", a, scalar=exponent)


def _add(a, b):
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def _sub(a, b):
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def _mul(a, b):
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd if a.requires_grad else None, g * ad if b.requires_grad else None))


def _div(a, b):
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return g / bd, -g * out / bd

    return _make(out, (a, b), bw)


def _scalar_mul(a, b):
    ad, s = a.data, b.data.reshape(())
    out = ad * s

    def bw(g):
        gb = np.asarray(np.sum(g * ad), dtype=b.dtype).reshape(b.shape) if b.requires_grad else None
        return (g * s if a.requires_grad else None), gb

    return _make(out, (a, b), bw)


def _sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _gelu(a):
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = x * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(out.astype(x.dtype, copy=False), (a,), bw)


def _relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def _log(a):
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def _abs(a):
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def _scale(a, s):
    return _make(a.data * a.dtype.type(s), (a,), lambda g: (g * g.dtype.type(s),))


def _shift(a, s):
    return _make(a.data + a.dtype.type(s), (a,), lambda g: (g,))


def _pow(a, p):
    x = a.data
    out = np.power(x, p)

    def bw(g):
        if p == 0.0:
            return (np.zeros_like(g),)
        return (g * p * np.power(x, p - 1.0),)

    return _make(out, (a,), bw)


_BINARY = {"add": _add, "sub": _sub, "mul": _mul, "div": _div}
_UNARY = {"sigmoid": _sigmoid, "gelu": _gelu, "relu": _relu, "log": _log, "abs": _abs}
_SCALAR = {"scale": _scale, "shift": _shift, "pow": _pow}


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping was active."""
    x = a.data
    out = np.clip(x, lo, hi)
    inside = (x >= lo) & (x <= hi)
    return _make(out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and layout


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _make(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(shape, g.reshape(()) / n, dtype=g.dtype),),
    )


def mean_axes(a: Tensor, axes: Sequence[int]) -> Tensor:
    """Mean over ``axes``, dropping them from the shape."""
    axes = tuple(ax % a.ndim for ax in axes)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape) / g.dtype.type(n),)

    return _make(a.data.mean(axis=axes), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = a.data.reshape(tuple(shape)).copy()
    return _make(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    if not tensors:
        raise UsageError("concat of an empty list")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: shape mismatch {ref} vs {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        grads = []
        for i, t in enumerate(tensors):
            if not t.requires_grad:
                grads.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(idx)]))
        return grads

    return _make(out, tuple(tensors), bw)


def split(a: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    axis = axis % a.ndim
    if sum(sizes) != a.shape[axis] or any(s <= 0 for s in sizes):
        raise DimensionError(f"split: sizes {list(sizes)} do not partition axis {axis} of {a.shape}")
    bounds = np.cumsum([0] + list(sizes))
    pieces = []
    for i in range(len(sizes)):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        idx = tuple(idx)

        def bw(g, idx=idx):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        pieces.append(_make(np.ascontiguousarray(a.data[idx]), (a,), bw))
    return pieces


def take(a: Tensor, flat_indices: Sequence[int]) -> Tensor:
    """Gather elements of the flattened tensor into a 1-D tensor."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.size):
        raise DimensionError(f"take: indices out of range for {a.shape}")
    shape = a.shape

    def bw(g):
        full = np.zeros(a.size, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full.reshape(shape),)

    return _make(a.data.reshape(-1)[idx].copy(), (a,), bw)


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution.

    ``padding`` is zero-fill, either one int for both axes or ``(pad_h, pad_w)``.
    """

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: Union[int, tuple] = 0
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1 or self.groups < 1:
            raise ConfigError(f"invalid conv geometry {self}")
        if min(self.pad) < 0:
            raise ConfigError(f"negative padding {self.padding}")

    @property
    def pad(self) -> tuple:
        if isinstance(self.padding, int):
            return (self.padding, self.padding)
        return tuple(self.padding)

    def output_size(self, h: int, w: int) -> tuple:
        ph, pw = self.pad
        return ((h + 2 * ph - self.kernel_h) // self.stride + 1, (w + 2 * pw - self.kernel_w) // self.stride + 1)


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _window(x: np.ndarray, i: int, j: int, ho: int, wo: int, s: int) -> tuple:
    return (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """Grouped 2-D cross-correlation on NCHW input.

    ``weight`` has shape ``(C_out, C_in // groups, kernel_h, kernel_w)``.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got {x.shape}")
    n, cin, h, w = x.shape
    cout, cpg, kh, kw = weight.shape
    g = spec.groups
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise ConfigError(f"weight kernel {(kh, kw)} disagrees with spec {(spec.kernel_h, spec.kernel_w)}")
    if cin % g or cout % g or cpg != cin // g:
        raise ConfigError(f"conv2d: groups={g} inconsistent with C_in={cin}, C_out={cout}, weight {weight.shape}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} vs C_out={cout}")
    if spec.has_bias != (bias is not None):
        raise ConfigError(f"conv2d: spec.has_bias={spec.has_bias} but bias is {'set' if bias is not None else 'None'}")
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw} with padding {spec.pad}")

    ph, pw = spec.pad
    s = spec.stride
    xp = _pad(x.data, ph, pw)
    wd = weight.data
    depthwise = g == cin and cout == cin

    if depthwise:
        out = _depthwise_forward(xp, wd, ho, wo, s)
    elif kh == kw == 1 and s == 1 and ph == pw == 0 and g == 1:
        out = np.matmul(wd.reshape(cout, cin), x.data.reshape(n, cin, h * w)).reshape(n, cout, h, w)
    else:
        cols = _im2col(xp, kh, kw, ho, wo, s)  # (n, cin, kh, kw, ho, wo)
        out = _grouped_matmul(cols, wd, g, n, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(gout):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = gout.sum(axis=(0, 2, 3))
        if depthwise:
            gxp, gw = _depthwise_backward(xp, wd, gout, ho, wo, s, x.requires_grad, weight.requires_grad)
        elif kh == kw == 1 and s == 1 and ph == pw == 0 and g == 1:
            g2 = gout.reshape(n, cout, h * w)
            if weight.requires_grad:
                gw = np.matmul(g2, x.data.reshape(n, cin, h * w).transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            gxp = np.matmul(wd.reshape(cout, cin).T, g2).reshape(n, cin, h, w) if x.requires_grad else None
        else:
            gxp, gw = _grouped_backward(xp, cols, wd, gout, g, kh, kw, ho, wo, s, x.requires_grad, weight.requires_grad)
        if gxp is not None:
            gx = gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, s: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[_window(xp, i, j, ho, wo, s)]
    return cols


def _grouped_matmul(cols: np.ndarray, wd: np.ndarray, g: int, n: int, ho: int, wo: int) -> np.ndarray:
    cin = cols.shape[1]
    cout, cpg, kh, kw = wd.shape
    opg = cout // g
    out = np.empty((n, cout, ho * wo), dtype=cols.dtype)
    for k in range(g):
        c = cols[:, k * cpg : (k + 1) * cpg].reshape(n, cpg * kh * kw, ho * wo)
        wk = wd[k * opg : (k + 1) * opg].reshape(opg, cpg * kh * kw)
        out[:, k * opg : (k + 1) * opg] = np.matmul(wk, c)
    return out.reshape(n, cout, ho, wo)


def _grouped_backward(xp, cols, wd, gout, g, kh, kw, ho, wo, s, need_x, need_w):
    n, cin = xp.shape[:2]
    cout, cpg = wd.shape[:2]
    opg = cout // g
    g2 = gout.reshape(n, cout, ho * wo)
    gw = np.empty_like(wd) if need_w else None
    gcols = np.empty((n, cin, kh, kw, ho, wo), dtype=gout.dtype) if need_x else None
    for k in range(g):
        gk = g2[:, k * opg : (k + 1) * opg]
        wk = wd[k * opg : (k + 1) * opg].reshape(opg, cpg * kh * kw)
        if need_w:
            c = cols[:, k * cpg : (k + 1) * cpg].reshape(n, cpg * kh * kw, ho * wo)
            gw[k * opg : (k + 1) * opg] = np.matmul(gk, c.transpose(0, 2, 1)).sum(axis=0).reshape(opg, cpg, kh, kw)
        if need_x:
            gcols[:, k * cpg : (k + 1) * cpg] = np.matmul(wk.T, gk).reshape(n, cpg, kh, kw, ho, wo)
    gxp = None
    if need_x:
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[_window(xp, i, j, ho, wo, s)] += gcols[:, :, i, j]
    return gxp, gw


def _depthwise_forward(xp, wd, ho, wo, s):
    n, c = xp.shape[:2]
    kh, kw = wd.shape[2:]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(xp, wd))
    for i in range(kh):
        for j in range(kw):
            out += wd[:, 0, i, j][None, :, None, None] * xp[_window(xp, i, j, ho, wo, s)]
    return out


def _depthwise_backward(xp, wd, gout, ho, wo, s, need_x, need_w):
    kh, kw = wd.shape[2:]
    gxp = np.zeros_like(xp) if need_x else None
    gw = np.empty_like(wd) if need_w else None
    for i in range(kh):
        for j in range(kw):
            win = _window(xp, i, j, ho, wo, s)
            if need_w:
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[win])
            if need_x:
                gxp[win] += wd[:, 0, i, j][None, :, None, None] * gout
    return gxp, gw


# ---------------------------------------------------------------------------
# resampling


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` matrix of 1-D linear interpolation.

    Half-pixel (align-corners=False) mapping ``src = (dst + 0.5) * n_in / n_out - 0.5``
    with ``src`` clamped to ``[0, n_in - 1]``.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale_ = n_in / n_out
    for d in range(n_out):
        src = min(max((d + 0.5) * scale_ - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[d, i0] += 1.0 - lam
        m[d, i1] += lam
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects NCHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: output size {out_h}x{out_w} must be positive")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return _make(x.data.copy(), (x,), lambda g: (g,))
    ry = interpolation_matrix(h, out_h, x.dtype)
    rx = interpolation_matrix(w, out_w, x.dtype)
    # (n,c,h,w) -> rows then columns
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def bw(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over ``(N, H, W)``.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place. The running variance tracks the
    same biased estimate used for normalization, so a converged model
    normalizes identically in both modes even on tiny (e.g. 2x2) maps.
    In evaluation mode the running statistics are used.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    gd = gamma.data[None, :, None, None]
    bd = beta.data[None, :, None, None]
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu = xd.mean(axis=(0, 2, 3))
        xc = xd - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv[None, :, None, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        out = xhat * gd + bd

        def bw(g):
            ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            gx = None
            if x.requires_grad:
                gxhat = g * gd
                gx = (
                    inv[None, :, None, None]
                    / m
                    * (
                        m * gxhat
                        - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    )
                )
            return gx, ggamma, gbeta

    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean[None, :, None, None]) * inv[None, :, None, None]
        out = xhat * gd + bd

        def bw(g):
            ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            gx = g * gd * inv[None, :, None, None] if x.requires_grad else None
            return gx, ggamma, gbeta

    return _make(out.astype(xd.dtype, copy=False), (x, gamma, beta), bw)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int = 1, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over each group of ``C / groups`` channels and all pixels, then a per-channel affine.

    Statistics never mix samples, so training and evaluation behave identically.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"group_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n, c, h, w = x.shape
    if c % groups:
        raise ConfigError(f"group_norm: {groups} groups do not divide {c} channels")
    xd = x.data.reshape(n, groups, -1)
    m = xd.shape[2]
    mu = xd.mean(axis=2, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(n, c, h, w)
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = (g * gd).reshape(n, groups, m)
            xh = xhat.reshape(n, groups, m)
            gx = inv / m * (m * gxhat - gxhat.sum(axis=2, keepdims=True) - xh * (gxhat * xh).sum(axis=2, keepdims=True))
            gx = gx.reshape(n, c, h, w)
        return gx, ggamma, gbeta

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


def grouped_sandwich(x: Tensor, left: np.ndarray, right: np.ndarray) -> Tensor:
    """``y[:, c] = left[g] @ x[:, c] @ right[g].T`` for channel ``c`` in contiguous group ``g``.

    ``left`` is ``(G, H_out, H)`` and ``right`` is ``(G, W_out, W)``; both are
    constants (no gradient). With banded matrices this is a separable filter.
    """
    n, c, h, w = x.shape
    gcount = left.shape[0]
    if c % gcount or right.shape[0] != gcount or left.shape[2] != h or right.shape[2] != w:
        raise DimensionError(f"grouped_sandwich: input {x.shape}, left {left.shape}, right {right.shape}")
    per = c // gcount
    ho, wo = left.shape[1], right.shape[1]
    left = left.astype(x.dtype, copy=False)
    right = right.astype(x.dtype, copy=False)

    def apply(a, lm, rm, hi, wi, hout, wout):
        # columns first on the (n, G, per*hi, wi) view, then rows per channel; no transposed copies
        t = np.matmul(a.reshape(n, gcount, per * hi, wi), rm[None].transpose(0, 1, 3, 2))
        t = np.matmul(lm[None, :, None], t.reshape(n, gcount, per, hi, wout))
        return t.reshape(n, c, hout, wout)

    out = apply(x.data, left, right, h, w, ho, wo)

    def bw(g):
        return (apply(g, left.transpose(0, 2, 1), right.transpose(0, 2, 1), ho, wo, h, w),)

    return _make(out, (x,), bw)
