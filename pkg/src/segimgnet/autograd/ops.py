"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a closure that
returns one gradient per parent.  Image tensors use NCHW layout.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError
from . import _kernels
from .tensor import Tensor, as_tensor


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    b = as_tensor(b)
    return as_tensor(a, dtype=b.dtype), b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (covers per-channel scaling)."""
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor._result(ad * bd, (a, b), backward)


elementwise_mul = mul


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return Tensor._result(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,))


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; no gradient flows where the floor is active.

    NaN is not floored, so a broken forward pass still shows up in the loss.
    """
    if floor > 0.0:
        active = ~(x.data <= floor)
        xd = np.where(active, x.data, x.dtype.type(floor))
        return Tensor._result(np.log(xd), (x,), lambda g: (np.where(active, g / xd, 0.0).astype(g.dtype),))
    xd = x.data
    return Tensor._result(np.log(xd), (x,), lambda g: (g / xd,))


# -- reductions and reshaping -----------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    count = x.data.size if axis is None else int(np.prod([shape[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return Tensor._result(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    shapes = [t.shape for t in tensors]
    for s in shapes[1:]:
        if len(s) != len(shapes[0]) or any(
            s[d] != shapes[0][d] for d in range(len(s)) if d != axis % len(s)
        ):
            raise ConfigurationError(f"concat along axis {axis}: incompatible shapes {shapes}")
    splits = np.cumsum([s[axis] for s in shapes])[:-1]
    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=1)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ConfigurationError(f"matmul: cannot multiply {ad.shape} by {bd.shape}")
    return Tensor._result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise ConfigurationError(f"dense: input {xd.shape} incompatible with weight {wd.shape}")
    out = xd @ wd.T
    if bias is not None:
        out += bias.data

    def backward(g):
        return (g @ wd, g.T @ xd, g.sum(axis=0) if bias is not None else None)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._result(out, parents, backward)


# -- activations ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    xd = np.ascontiguousarray(xd)
    cdf = _kernels.gelu_cdf(xd)
    out = xd * cdf

    def backward(g):
        return (_kernels.gelu_grad(xd, cdf, g),)

    return Tensor._result(out, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so the result stays strictly inside (0, 1) after rounding."""
    fi = np.finfo(x.dtype)
    out = np.clip(_sigmoid(x.data), fi.tiny, 1.0 - fi.epsneg)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),))


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}; expected relu, gelu or sigmoid") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    # floor keeps every probability strictly positive when exp underflows
    out = np.maximum(e / e.sum(axis=axis, keepdims=True), np.finfo(e.dtype).tiny)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


# -- normalization ----------------------------------------------------------

def channel_layernorm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over axis 1 independently at every (sample, position).

    Works for NCHW maps and for N x D embeddings; ``gain`` and ``offset`` have
    one entry per channel.
    """
    xd = x.data
    C = xd.shape[1]
    if gain.shape != (C,) or offset.shape != (C,):
        raise ConfigurationError(f"layernorm: {C} channels but gain {gain.shape}, offset {offset.shape}")
    bshape = (1, C) + (1,) * (xd.ndim - 2)
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data.reshape(bshape)
    out = xhat * gd + offset.data.reshape(bshape)
    red = tuple(i for i in range(xd.ndim) if i != 1)

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._result(out.astype(xd.dtype), (x, gain, offset), backward)


def group_norm(x: Tensor, groups: int, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over each group of C/groups channels and all positions (NCHW)."""
    xd = x.data
    N, C = xd.shape[:2]
    if groups < 1 or C % groups:
        raise ConfigurationError(f"group_norm: {C} channels are not divisible into {groups} groups")
    if gain.shape != (C,) or offset.shape != (C,):
        raise ConfigurationError(f"group_norm: {C} channels but gain {gain.shape}, offset {offset.shape}")
    xg = xd.reshape(N, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=2, keepdims=True) + eps)
    xhat = (xc * inv).reshape(xd.shape)
    bshape = (1, C) + (1,) * (xd.ndim - 2)
    gd = gain.data.reshape(bshape)
    out = xhat * gd + offset.data.reshape(bshape)
    red = tuple(i for i in range(xd.ndim) if i != 1)

    def backward(g):
        dxhat = (g * gd).reshape(N, groups, -1)
        xh = xhat.reshape(N, groups, -1)
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return dx.reshape(xd.shape), (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._result(out.astype(xd.dtype), (x, gain, offset), backward)


# -- convolution ------------------------------------------------------------

def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input and (O, C/groups, K, K) weight."""
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ConfigurationError(f"conv2d: expected 4-d input and weight, got {xd.shape} and {wd.shape}")
    N, C, H, W = xd.shape
    O, Cg, K, K2 = wd.shape
    if K != K2:
        raise ConfigurationError(f"conv2d: only square kernels supported, got {K}x{K2}")
    if groups < 1 or C % groups or O % groups:
        raise ConfigurationError(
            f"conv2d: in_channels={C} and out_channels={O} must be divisible by groups={groups}")
    if Cg != C // groups:
        raise ConfigurationError(
            f"conv2d: weight expects {Cg} input channels per group, input provides {C // groups}")
    if H + 2 * padding < K or W + 2 * padding < K:
        raise ConfigurationError(
            f"conv2d: kernel {K} does not fit padded input {H + 2 * padding}x{W + 2 * padding}")
    if bias is not None and bias.shape != (O,):
        raise ConfigurationError(f"conv2d: bias shape {bias.shape} does not match out_channels={O}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    Ho, Wo = _conv_out(H, K, stride, padding), _conv_out(W, K, stride, padding)

    if groups == 1 and K == 1 and stride == 1 and padding == 0:
        out, backward = _pointwise(xd, wd)
    elif groups == C and O == C:
        out, backward = _depthwise(xd, wd, stride, padding, Ho, Wo)
    else:
        out, backward = _grouped(xd, wd, stride, padding, groups, Ho, Wo)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)

    def full_backward(g):
        dx, dw = backward(g)
        return dx, dw, (g.sum(axis=(0, 2, 3)) if bias is not None else None)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._result(out, parents, full_backward)


def _pointwise(xd, wd):
    N, C, H, W = xd.shape
    O = wd.shape[0]
    w2 = wd.reshape(O, C)
    x3 = xd.reshape(N, C, H * W)
    out = np.matmul(w2, x3).reshape(N, O, H, W)

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(N, O, H * W)
        dw = np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        dx = np.matmul(w2.T, g3).reshape(xd.shape)
        return dx, dw

    return out, backward


def _pad(xd, padding):
    if padding == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(xp, K, stride, Ho, Wo):
    """(N, C*K*K, Ho*Wo) patch tensor, so ``weight @ cols`` lands directly in NCHW order."""
    N, C = xp.shape[:2]
    cols = np.empty((N, C * K * K, Ho * Wo), dtype=xp.dtype)
    return _kernels.im2col(np.ascontiguousarray(xp), K, stride, Ho, Wo, cols)


def _col2im(dcols, shape, K, stride, Ho, Wo):
    return _kernels.col2im(np.ascontiguousarray(dcols), K, stride, Ho, Wo, np.zeros(shape, dtype=dcols.dtype))


def _unpad(dxp, padding):
    if padding == 0:
        return dxp
    return dxp[:, :, padding:-padding, padding:-padding]


def _grouped(xd, wd, stride, padding, groups, Ho, Wo):
    N, C, H, W = xd.shape
    O, Cg, K, _ = wd.shape
    Og = O // groups
    R = Cg * K * K  # patch rows per group; groups are contiguous row blocks of cols
    xp = _pad(xd, padding)
    cols = _im2col(xp, K, stride, Ho, Wo)
    w2 = wd.reshape(O, R)
    if groups == 1:
        out = np.matmul(w2, cols)
    else:
        out = np.concatenate([np.matmul(w2[gi * Og:(gi + 1) * Og], cols[:, gi * R:(gi + 1) * R])
                              for gi in range(groups)], axis=1)
    out = out.reshape(N, O, Ho, Wo)

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(N, O, Ho * Wo)
        dw = np.empty((O, R), dtype=wd.dtype)
        dcols = np.empty_like(cols)
        for gi in range(groups):
            o, r = slice(gi * Og, (gi + 1) * Og), slice(gi * R, (gi + 1) * R)
            dw[o] = np.matmul(g3[:, o], cols[:, r].transpose(0, 2, 1)).sum(axis=0)
            dcols[:, r] = np.matmul(w2[o].T, g3[:, o])
        dxp = _col2im(dcols, xp.shape, K, stride, Ho, Wo)
        return _unpad(dxp, padding), dw.reshape(wd.shape)

    return out, backward


def _depthwise(xd, wd, stride, padding, Ho, Wo):
    N, C = xd.shape[:2]
    xp = np.ascontiguousarray(_pad(xd, padding))
    w = np.ascontiguousarray(wd)
    out = _kernels.depthwise_forward(xp, w, stride, np.zeros((N, C, Ho, Wo), dtype=xd.dtype))

    def backward(g):
        dxp, dw = _kernels.depthwise_backward(
            xp, w, np.ascontiguousarray(g), stride, np.zeros_like(xp), np.zeros_like(w))
        return _unpad(dxp, padding), dw

    return out, backward


# -- resampling and pooling -------------------------------------------------

def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 1:
        raise ConfigurationError(f"upsample_nearest: factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return Tensor._result(x.data.copy(), (x,), lambda g: (g,))
    f = int(factor)
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)
    return Tensor._result(out, (x,), lambda g: (g.reshape(N, C, H, f, W, f).sum(axis=(3, 5)),))


def resize_nearest(x: Tensor, size: tuple) -> Tensor:
    """Nearest-neighbour resize to ``size`` = (H, W); source index floor(o * in / out)."""
    N, C, H, W = x.shape
    Ho, Wo = size
    if (Ho, Wo) == (H, W):
        return x
    rows = (np.arange(Ho) * H) // Ho
    cols = (np.arange(Wo) * W) // Wo
    out = x.data[:, :, rows][:, :, :, cols]

    def backward(g):
        dx = np.zeros((N, C, H, Wo), dtype=g.dtype)
        np.add.at(dx, (slice(None), slice(None), rows), g)
        dxx = np.zeros((N, C, H, W), dtype=g.dtype)
        np.add.at(dxx, (slice(None), slice(None), slice(None), cols), dx)
        return (dxx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)


def pool2d(x: Tensor, kind: str = "max", window: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max or mean pooling without padding. Max ties go to the first index in row-major order."""
    if kind not in ("max", "mean"):
        raise ConfigurationError(f"pool2d: kind must be 'max' or 'mean', got {kind!r}")
    stride = window if stride is None else stride
    N, C, H, W = x.shape
    if window < 1 or stride < 1 or window > H or window > W:
        raise ConfigurationError(f"pool2d: window {window} does not fit input {H}x{W}")
    Ho, Wo = (H - window) // stride + 1, (W - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(N, C, Ho, Wo, window * window)
    if kind == "mean":
        out = flat.mean(axis=-1)

        def backward(g):
            dx = np.zeros(x.shape, dtype=g.dtype)
            gs = g / (window * window)
            for i in range(window):
                for j in range(window):
                    dx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += gs
            return (dx,)
    else:
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            dx = np.zeros(x.shape, dtype=g.dtype)
            for i in range(window):
                for j in range(window):
                    hit = arg == i * window + j
                    dx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += g * hit
            return (dx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C."""
    N, C, H, W = x.shape
    return Tensor._result(
        x.data.mean(axis=(2, 3)), (x,),
        lambda g: (np.broadcast_to((g / (H * W))[:, :, None, None], x.shape),),
    )
