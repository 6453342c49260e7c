"""Differentiable operations.

Feature maps are ``(N, C, H, W)``. There is no implicit broadcasting: shapes
must agree exactly except where an op documents otherwise.
"""

from __future__ import annotations

import functools

import numpy as np

from .. import losses as _losses
from ..errors import ShapeMismatch
from .tensor import Tensor, make_node


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("add", a, b)
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; a Python scalar operand scales the tensor."""
    if np.isscalar(b) or np.isscalar(a):
        t, c = (a, float(b)) if np.isscalar(b) else (b, float(a))
        return make_node(t.data * c, (t,), lambda g: (g * c,), "scale")
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return make_node(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_node(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def weighted_sum(terms) -> Tensor:
    """``sum(w * t)`` over ``(w, scalar tensor)`` pairs; zero weights are dropped."""
    terms = [(float(w), t) for w, t in terms if w != 0]
    if not terms:
        return Tensor(0.0)
    value = 0.0
    for w, t in terms:
        value += w * float(t.data)
    weights = [w for w, _ in terms]
    return make_node(np.array(value), [t for _, t in terms],
                     lambda g: tuple(g * w for w in weights), "weighted_sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeMismatch(f"concat(axis={axis}): incompatible shapes "
                                f"{[u.shape for u in tensors]}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_node(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: spatial shapes {a.shape} and {b.shape} differ")
    return concat([a, b], axis=1)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Per-channel bias on an ``(N, C, H, W)`` map."""
    if x.data.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeMismatch(f"add_bias: bias {b.shape} does not fit input {x.shape}")
    return make_node(x.data + b.data[None, :, None, None], (x, b),
                     lambda g: (g, g.sum(axis=(0, 2, 3))), "add_bias")


# -- convolution -------------------------------------------------------------

def _conv_out(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    n, c = xp.shape[:2]
    # (N, Ho, Wo, C, k, k) -> rows of C*k*k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def conv2d_forward_direct(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Reference convolution by explicit loops (slow)."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[b, ic, i * stride + di, j * stride + dj] * w[oc, ic, di, dj]
                    out[b, oc, i, j] = acc
    return out


def conv2d_forward_im2col(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols @ w.reshape(o, -1).T
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           impl: str = "im2col") -> Tensor:
    """Cross-correlation of ``(N, C, H, W)`` input with ``(O, C, k, k)`` kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv2d: input {x.shape}, kernel {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: kernel {k} does not fit input {x.shape} with pad {pad}")
    if b is not None and b.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias {b.shape} for {o} output channels")

    if impl == "direct":
        out = conv2d_forward_direct(x.data, w.data, stride, pad)
        cols = None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = _im2col(xp, k, stride, ho, wo)
        out = (cols @ w.data.reshape(o, -1).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    xdata, wdata = x.data, w.data

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = gx = gb = None
        if w.requires_grad:
            cl = cols
            if cl is None:
                xp_ = np.pad(xdata, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
                cl = _im2col(xp_, k, stride, ho, wo)
            gw = (g2.T @ cl).reshape(w.shape)
        if x.requires_grad:
            dcols = (g2 @ wdata.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
            for di in range(k):
                for dj in range(k):
                    gxp[:, :, di: di + (ho - 1) * stride + 1: stride,
                        dj: dj + (wo - 1) * stride + 1: stride] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad: pad + h, pad: pad + wd]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(out, parents, backward, "conv2d")


# -- resampling ----------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` linear interpolation weights, half-pixel centers."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[i, i0] += 1.0 - f
        m[i, i1] += f
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    mh = _bilinear_matrix(x.shape[2], out_h)
    mw = _bilinear_matrix(x.shape[3], out_w)
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True)
    return make_node(out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True),),
                     "resize_bilinear")


def upsample2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"upsample2x: expected (N, C, H, W), got {x.shape}")
    if mode == "bilinear":
        return resize_bilinear(x, 2 * x.shape[2], 2 * x.shape[3])
    if mode != "nearest":
        raise ValueError(f"unknown upsample mode {mode!r}")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample_nearest")


def downsample2x_avg(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"downsample2x_avg: odd spatial size {x.shape}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return make_node(out, (x,), lambda g: (g.repeat(2, axis=2).repeat(2, axis=3) * 0.25,), "downsample2x_avg")


# -- losses as graph nodes -------------------------------------------------------

def focal_loss(p: Tensor, labels, params: _losses.FocalParams = _losses.FocalParams()) -> Tensor:
    value, grad = _losses.focal_loss(p.data, labels, params)
    return make_node(np.array(value), (p,), lambda g: (g * grad,), "focal_loss")


def smooth_l1_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean smooth-L1 of ``pred - target`` over the rows selected by ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or mask.shape != pred.shape[:1]:
        raise ShapeMismatch(f"smooth_l1_loss: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    value, grad_sel = _losses.smooth_l1(pred.data[mask] - target[mask])
    shape = pred.shape

    def backward(g):
        full = np.zeros(shape)
        full[mask] = g * grad_sel
        return (full,)

    return make_node(np.array(value), (pred,), backward, "smooth_l1")


def gaussian_loss(pred: Tensor, target, params: _losses.HemParams = _losses.HemParams()) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"gaussian_loss: pred {pred.shape} vs target {target.shape}")
    flat = pred.data.reshape((-1,) + pred.shape[-2:])
    value, grad = _losses.gaussian_loss(flat, target.reshape(flat.shape), params)
    grad = grad.reshape(pred.shape)
    return make_node(np.array(value), (pred,), lambda g: (g * grad,), "gaussian_loss")
