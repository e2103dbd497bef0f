"""Differentiable primitives.

Elementwise ops accept operands of identical shape, or a 0-d / Python scalar
on either side.  Any other broadcast must be spelled out with :func:`expand`
so that every reduction in the backward pass is explicit.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor

# ---------------------------------------------------------------------------
# elementwise arithmetic


def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (use expand)")
    return a, b


def _fit(g: np.ndarray, like: Tensor) -> np.ndarray:
    # reduce a gradient to a scalar operand's shape
    if like.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_fit(g * bd, a), _fit(g * ad, b)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _fit(g / bd, a), _fit(-g * out / bd, b)

    return _make(out, (a, b), backward, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("power() takes a Python scalar exponent")
    p = float(exponent)
    xd = x.data
    return _make(xd**p, (x,), lambda g: (g * p * xd ** (p - 1.0),), "pow")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _make(out, (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``.  The gradient passes only where ``lo < x < hi``;
    points sitting exactly on a bound get zero."""
    if lo is not None and hi is not None and lo > hi:
        raise ValueError(f"clamp: lo={lo} > hi={hi}")
    xd = x.data
    inside = np.ones(xd.shape, dtype=bool)
    if lo is not None:
        inside &= xd > lo
    if hi is not None:
        inside &= xd < hi
    out = np.clip(xd, lo, hi) if (lo is not None or hi is not None) else xd.copy()
    return _make(out, (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes, keepdims), 1.0 / count)


def mean_all(x: Tensor) -> Tensor:
    return mean(x)


def mean_spatial(x: Tensor) -> Tensor:
    """Mean over the trailing H, W axes of an NCHW tensor, keeping dims."""
    return mean(x, (2, 3), keepdims=True)


global_avg_pool = mean_spatial


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast ``x`` to ``shape`` (numpy rules, same rank required)."""
    shape = tuple(shape)
    if len(shape) != x.ndim:
        raise ShapeError(f"expand: rank {x.ndim} -> {len(shape)} not supported")
    for s, t in zip(x.shape, shape):
        if s != t and s != 1:
            raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, (x,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum(sizes)[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def detach(x: Tensor) -> Tensor:
    return x.detach()


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax over an empty axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


softmax_lastdim = softmax


# ---------------------------------------------------------------------------
# convolutions and spatial resampling


def _check_nchw(x: Tensor, op: str):
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW input, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[Co,C,k,k]``."""
    _check_nchw(x, "conv2d")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [Co,Ci,k,k], got {w.shape}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({co},)")
    k, s = kh, stride
    ho = (h + 2 * pad - k) // s + 1
    wo = (wd + 2 * pad - k) // s + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, k={k}, pad={pad}")
    xd, wdat = x.data, w.data

    if k == 1 and pad == 0:
        xs = xd[:, :, ::s, ::s]
        out = np.einsum("nchw,oc->nohw", xs, wdat[:, :, 0, 0], optimize=True)

        def backward(g):
            gx = None
            if x.requires_grad:
                gx = np.zeros_like(xd)
                gx[:, :, ::s, ::s] = np.einsum("nohw,oc->nchw", g, wdat[:, :, 0, 0], optimize=True)
            gw = np.einsum("nohw,nchw->oc", g, xs, optimize=True)[:, :, None, None]
            gb = g.sum(axis=(0, 2, 3)) if b is not None else None
            return (gx, gw, gb) if b is not None else (gx, gw)

    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        xt = xp.transpose(1, 0, 2, 3)
        cols = np.empty((c, k, k, n, ho, wo))
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
        colmat = cols.reshape(c * k * k, n * ho * wo)
        wmat = wdat.reshape(co, c * k * k)
        out = (wmat @ colmat).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)

        def backward(g):
            gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
            gw = (gmat @ colmat.T).reshape(wdat.shape)
            gx = None
            if x.requires_grad:
                dcols = (wmat.T @ gmat).reshape(c, k, k, n, ho, wo)
                gxt = np.zeros((c, n) + xp.shape[2:])
                for i in range(k):
                    for j in range(k):
                        gxt[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[:, i, j]
                gx = gxt.transpose(1, 0, 2, 3)
                gx = gx[:, :, pad : pad + h, pad : pad + wd] if pad else gx
            gb = g.sum(axis=(0, 2, 3)) if b is not None else None
            return (gx, gw, gb) if b is not None else (gx, gw)

    if b is not None:
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)
    else:
        parents = (x, w)
    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")


def dwconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, pad: int | None = None) -> Tensor:
    """Depthwise convolution, ``w[C,1,k,k]``; shape-preserving by default."""
    _check_nchw(x, "dwconv2d")
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[0] != c or w.shape[1] != 1:
        raise ShapeError(f"dwconv2d: weight {w.shape} does not match {c} channels")
    k = w.shape[2]
    if w.shape[3] != k or k % 2 == 0:
        raise ShapeError(f"dwconv2d: kernel must be square and odd, got {w.shape[2:]}")
    if pad is None:
        pad = (k - 1) // 2
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    xd, wdat = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    out = np.zeros((n, c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + ho, j : j + wo] * wdat[None, :, 0, i, j, None, None]

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + ho, j : j + wo] += g * wdat[None, :, 0, i, j, None, None]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        gw = np.empty_like(wdat)
        for i in range(k):
            for j in range(k):
                gw[:, 0, i, j] = (g * xp[:, :, i : i + ho, j : j + wo]).sum(axis=(0, 2, 3))
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    if b is not None:
        out = out + b.data[None, :, None, None]
        return _make(out, (x, w, b), backward, "dwconv2d")
    return _make(out, (x, w), backward, "dwconv2d")


def maxpool2x2(x: Tensor) -> Tensor:
    _check_nchw(x, "maxpool2x2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial size {h}x{w} not even")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return _make(out, (x,), backward, "maxpool2x2")


def upsample_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling of an NCHW tensor."""
    _check_nchw(x, "upsample_nearest")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), backward, "upsample")


def spatial_map(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Apply fixed linear maps along H and W: ``y[n,c] = mh @ x[n,c] @ mw.T``.

    Covers adaptive average pooling and nearest resampling with arbitrary
    (non-integer) ratios.
    """
    _check_nchw(x, "spatial_map")
    if mh.shape[1] != x.shape[2] or mw.shape[1] != x.shape[3]:
        raise ShapeError(f"spatial_map: maps {mh.shape}, {mw.shape} vs input {x.shape}")
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True),)

    return _make(out, (x,), backward, "spatial_map")


def adaptive_pool_matrix(size_in: int, size_out: int) -> np.ndarray:
    """Row-stochastic [size_out, size_in] matrix averaging adaptive bins."""
    m = np.zeros((size_out, size_in))
    for i in range(size_out):
        lo = (i * size_in) // size_out
        hi = -((-(i + 1) * size_in) // size_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def nearest_matrix(size_in: int, size_out: int) -> np.ndarray:
    """0/1 [size_out, size_in] matrix selecting the nearest source index."""
    m = np.zeros((size_out, size_in))
    m[np.arange(size_out), (np.arange(size_out) * size_in) // size_out] = 1.0
    return m
