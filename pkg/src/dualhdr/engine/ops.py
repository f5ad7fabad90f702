"""Differentiable primitives.

Image tensors are laid out NCHW. Every op returns a new ``Tensor`` and, when
a parent requires grad, registers a closure computing the vector-Jacobian
product. Broadcasting is limited to one operand expanding into the other's
shape (scalars, per-channel ``(1, C, 1, 1)`` vectors and the like).
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import Tensor, accumulate, as_tensor, make

# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shape(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out != a.shape and out != b.shape:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "add")

    def bw(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "sub")

    def bw(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "mul")

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make(a.data * b.data, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.data.dtype.type(c)
    return make(x.data * c, (x,), lambda g: accumulate(x, g * c), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    return make(x.data + x.data.dtype.type(c), (x,), lambda g: accumulate(x, g), "add_scalar")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                lambda g: accumulate(x, g * mask), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return make(y, (x,), lambda g: accumulate(x, g * y * (1 - y)), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make(y, (x,), bw, "softmax")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise ValueError("log: input must be positive")
    return make(np.log(x.data), (x,), lambda g: accumulate(x, g / x.data), "log")


def abs_(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return make(np.abs(x.data), (x,), lambda g: accumulate(x, g * s), "abs")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Saturating clamp; gradient passes only where the input is inside [lo, hi]."""
    inside = (x.data >= lo) & (x.data <= hi)
    return make(np.clip(x.data, lo, hi), (x,), lambda g: accumulate(x, g * inside), "clip")


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum_(x: Tensor) -> Tensor:
    return make(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                lambda g: accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype)), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g):
        accumulate(x, np.full(x.shape, g / n, dtype=x.dtype))

    return make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bw, "mean")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: ``(N, C, H, W) -> (N, C)``."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        accumulate(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype))

    return make(out, (x,), bw, "global_avg_pool")


def reshape(x: Tensor, shape) -> Tensor:
    return make(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(x.shape)), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    inv = np.argsort(axes)
    return make(x.data.transpose(axes), (x,),
                lambda g: accumulate(x, g.transpose(inv)), "transpose")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, g[tuple(idx)])

    return make(np.concatenate([t.data for t in xs], axis=axis), xs, bw, "concat")


def slice_(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        accumulate(x, full)

    return make(np.ascontiguousarray(out), (x,), bw, "slice")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (batch shapes must match)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2] or (a.shape[:-2] != b.shape[:-2] and b.ndim != 2):
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # one shared right operand: a single 2-D GEMM is much faster than a stacked one
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[-1])

        def bw2(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                accumulate(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                accumulate(b, a2.T @ g2)

        return make(out, (a, b), bw2, "matmul")

    def bw(g):
        if a.requires_grad:
            accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
            accumulate(b, gb)

    return make(a.data @ b.data, (a, b), bw, "matmul")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"fully_connected: input dim {x.shape[-1]} vs weight {weight.shape}")
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        if x.requires_grad:
            accumulate(x, g @ weight.data)
        if weight.requires_grad:
            accumulate(weight, g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return make(out, parents, bw, "fully_connected")


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(h, w, k, stride, pad, dilation):
    span = dilation * (k - 1) + 1
    ho = (h + 2 * pad - span) // stride + 1
    wo = (w + 2 * pad - span) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    return ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding="same", dilation: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input, ``(O, C, k, k)`` weight, zero padding.

    ``padding="same"`` pads ``dilation * (k - 1) // 2`` on each side.
    """
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c or kh != kw:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    k = kh
    pad = dilation * (k - 1) // 2 if padding == "same" else int(padding)
    ho, wo = _conv_geometry(h, w, k, stride, pad, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    offsets = [(i * dilation, j * dilation) for i in range(k) for j in range(k)]
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    if k == 1 and stride == 1:
        cols = xp[:, :, None]
    else:
        cols = np.stack([xp[:, :, di:di + hs:stride, dj:dj + ws:stride] for di, dj in offsets], axis=2)
    # cols: (N, C, K, Ho, Wo)
    wmat = weight.data.reshape(o, c * k * k)
    colmat = cols.reshape(n, c * k * k, ho * wo)
    out = np.matmul(wmat, colmat).reshape(n, o, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gm = g.reshape(n, o, ho * wo)
        if weight.requires_grad:
            gw = np.matmul(gm, colmat.transpose(0, 2, 1)).sum(axis=0)
            accumulate(weight, gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm).reshape(n, c, k * k, ho, wo)
            gxp = np.zeros_like(xp)
            for kk, (di, dj) in enumerate(offsets):
                gxp[:, :, di:di + hs:stride, dj:dj + ws:stride] += gcols[:, :, kk]
            accumulate(x, gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp)

    return make(out, parents, bw, "conv2d")


# ---------------------------------------------------------------------------
# patch tokens


@lru_cache(maxsize=64)
def _patch_index(c: int, h: int, w: int, patch: int, stride: int):
    rows = range(0, h - patch + 1, stride)
    cols = range(0, w - patch + 1, stride)
    ci, pi, pj = np.meshgrid(np.arange(c), np.arange(patch), np.arange(patch), indexing="ij")
    within = (ci * h * w + pi * w + pj).ravel()
    starts = np.array([r * w + q for r in rows for q in cols])
    idx = starts[:, None] + within[None, :]
    counts = np.bincount(idx.ravel(), minlength=c * h * w).astype(np.float64)
    covered = counts > 0
    if not covered.all():
        raise ValueError("patch geometry leaves pixels uncovered")
    disjoint = bool((counts == 1).all())
    return idx, counts, disjoint


def _scatter_tokens(tokens: np.ndarray, c, h, w, patch, stride) -> np.ndarray:
    idx, _, disjoint = _patch_index(c, h, w, patch, stride)
    n = tokens.shape[0]
    flat = tokens.reshape(n, -1)
    if disjoint:
        out = np.empty((n, c * h * w), dtype=tokens.dtype)
        out[:, idx.ravel()] = flat
    else:
        out = np.zeros((n, c * h * w), dtype=tokens.dtype)
        for b in range(n):
            out[b] = np.bincount(idx.ravel(), weights=flat[b], minlength=c * h * w)
    return out.reshape(n, c, h, w)


def unfold(x: Tensor, patch: int = 4, stride: int | None = None) -> Tensor:
    """``(N, C, H, W) -> (N, L, C*patch*patch)`` patch tokens, row-major patch order."""
    stride = patch if stride is None else stride
    n, c, h, w = x.shape
    idx, _, _ = _patch_index(c, h, w, patch, stride)
    out = x.data.reshape(n, -1)[:, idx]
    return make(out, (x,), lambda g: accumulate(x, _scatter_tokens(g, c, h, w, patch, stride)), "unfold")


def fold_unnormalized(tokens: Tensor, out_shape, patch: int = 4, stride: int | None = None) -> Tensor:
    """Exact adjoint of ``unfold``: overlapping contributions are summed."""
    stride = patch if stride is None else stride
    c, h, w = out_shape[-3:]
    idx, _, _ = _patch_index(c, h, w, patch, stride)
    out = _scatter_tokens(tokens.data, c, h, w, patch, stride)
    n = tokens.shape[0]
    return make(out, (tokens,), lambda g: accumulate(tokens, g.reshape(n, -1)[:, idx]), "fold_unnormalized")


def fold(tokens: Tensor, out_shape, patch: int = 4, stride: int | None = None) -> Tensor:
    """Inverse of ``unfold``: summed contributions divided by per-pixel overlap count."""
    stride = patch if stride is None else stride
    c, h, w = out_shape[-3:]
    idx, counts, disjoint = _patch_index(c, h, w, patch, stride)
    n = tokens.shape[0]
    summed = _scatter_tokens(tokens.data, c, h, w, patch, stride)
    if disjoint:
        return make(summed, (tokens,), lambda g: accumulate(tokens, g.reshape(n, -1)[:, idx]), "fold")
    inv = (1.0 / counts).reshape(c, h, w).astype(tokens.dtype)

    def bw(g):
        accumulate(tokens, (g * inv).reshape(n, -1)[:, idx])

    return make(summed * inv, (tokens,), bw, "fold")


# ---------------------------------------------------------------------------
# resampling


def pixel_shuffle_up(x: Tensor, factor: int = 2) -> Tensor:
    """``(N, C*r*r, H, W) -> (N, C, H*r, W*r)``; ``out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]``."""
    n, cr, h, w = x.shape
    r = factor
    if cr % (r * r):
        raise ValueError(f"pixel_shuffle_up: {cr} channels not divisible by {r * r}")
    c = cr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def bw(g):
        gx = g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)
        accumulate(x, gx)

    return make(out, (x,), bw, "pixel_shuffle_up")


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights, edge-clamped (rows: output samples)."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1 - frac
        m[i, hi] += frac
    return m


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    mh = _interp_matrix(h, factor).astype(x.dtype)
    mw = _interp_matrix(w, factor).astype(x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def bw(g):
        accumulate(x, np.matmul(np.matmul(mh.T, g), mw))

    return make(out, (x,), bw, "bilinear_upsample")


# ---------------------------------------------------------------------------
# orthonormal single-level Haar wavelet


def _haar_analysis(d: np.ndarray):
    a = d[:, :, 0::2, 0::2]
    b = d[:, :, 0::2, 1::2]
    c = d[:, :, 1::2, 0::2]
    e = d[:, :, 1::2, 1::2]
    ll = (a + b + c + e) * 0.5
    lh = (a - b + c - e) * 0.5
    hl = (a + b - c - e) * 0.5
    hh = (a - b - c + e) * 0.5
    return np.concatenate([ll, lh, hl, hh], axis=1)


def _haar_synthesis(p: np.ndarray):
    n, c4, h, w = p.shape
    c = c4 // 4
    ll, lh, hl, hh = p[:, :c], p[:, c:2 * c], p[:, 2 * c:3 * c], p[:, 3 * c:]
    out = np.empty((n, c, 2 * h, 2 * w), dtype=p.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def haar_dwt_packed(x: Tensor) -> Tensor:
    """Single-level orthonormal Haar DWT packed as ``(N, 4C, H/2, W/2)`` in LL, LH, HL, HH order."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"haar_dwt needs even spatial dims, got {x.shape[2:]}")
    # orthonormal: the adjoint is the inverse
    return make(_haar_analysis(x.data), (x,), lambda g: accumulate(x, _haar_synthesis(g)), "haar_dwt")


def haar_iwt_packed(p: Tensor) -> Tensor:
    if p.shape[1] % 4:
        raise ValueError("haar_iwt needs a packed tensor with 4*C channels")
    return make(_haar_synthesis(p.data), (p,), lambda g: accumulate(p, _haar_analysis(g)), "haar_iwt")


def haar_dwt(x: Tensor):
    """Return the ``(LL, LH, HL, HH)`` subbands of ``x``."""
    p = haar_dwt_packed(x)
    c = x.shape[1]
    return tuple(slice_(p, (slice(None), slice(i * c, (i + 1) * c))) for i in range(4))


def haar_iwt(subbands) -> Tensor:
    if isinstance(subbands, Tensor):
        return haar_iwt_packed(subbands)
    return haar_iwt_packed(concat(list(subbands), axis=1))
