"""Forward and backward kernels for the 3D U-Net.

All tensors are laid out (N, C, X, Y, Z).  Each ``*_backward`` takes the
upstream gradient plus whatever the forward returned or saw, and returns
gradients in the same order as the forward's array arguments.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    # (N, C, X, Y, Z, k, k, k)
    return sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))


def conv3d(x, w, b):
    """Stride-1 same-padded convolution; ``w`` is (Cout, Cin, k, k, k) with k odd."""
    k = w.shape[-1]
    cols = _windows(x, k)
    out = np.tensordot(cols, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # (N, X, Y, Z, Cout)
    out = np.moveaxis(out, -1, 1)
    return out + b[None, :, None, None, None]


def conv3d_backward(g, x, w):
    k = w.shape[-1]
    cols = _windows(x, k)
    gw = np.tensordot(g, cols, axes=([0, 2, 3, 4], [0, 2, 3, 4]))  # (Cout, Cin, k, k, k)
    gb = g.sum(axis=(0, 2, 3, 4))
    # input gradient is a same-padded correlation with the flipped, transposed kernel
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1])
    gx = conv3d(g, wt, np.zeros(wt.shape[0]))
    return gx, gw, gb


def prelu(x, a):
    return np.where(x > 0, x, a[None, :, None, None, None] * x)


def prelu_backward(g, x, a):
    pos = x > 0
    gx = np.where(pos, g, a[None, :, None, None, None] * g)
    ga = np.where(pos, 0.0, x * g).sum(axis=(0, 2, 3, 4))
    return gx, ga


def maxpool2(x):
    """2x2x2 max pool; returns (out, argmax) with argmax needed for backward."""
    n, c, X, Y, Z = x.shape
    blocks = x.reshape(n, c, X // 2, 2, Y // 2, 2, Z // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, X // 2, Y // 2, Z // 2, 8)
    # argmax picks the first maximum, which keeps ties deterministic
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(g, idx):
    n, c, X, Y, Z = g.shape
    blocks = np.zeros((n, c, X, Y, Z, 8), dtype=g.dtype)
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    blocks = blocks.reshape(n, c, X, Y, Z, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    return blocks.reshape(n, c, 2 * X, 2 * Y, 2 * Z)


def upconv2(x, w, b):
    """Stride-2 transposed convolution with a 2x2x2 kernel ``w`` of shape (Cin, Cout, 2, 2, 2)."""
    n, _, X, Y, Z = x.shape
    cout = w.shape[1]
    out = np.tensordot(x, w, axes=([1], [0]))  # (N, X, Y, Z, Cout, 2, 2, 2)
    out = out.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(n, cout, 2 * X, 2 * Y, 2 * Z)
    return out + b[None, :, None, None, None]


def upconv2_backward(g, x, w):
    n, cout, X2, Y2, Z2 = g.shape
    gb = g.reshape(n, cout, X2 // 2, 2, Y2 // 2, 2, Z2 // 2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    # gb: (N, Cout, X, Y, Z, 2, 2, 2)
    gw = np.tensordot(x, gb, axes=([0, 2, 3, 4], [0, 2, 3, 4]))  # (Cin, Cout, 2, 2, 2)
    gx = np.tensordot(gb, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # (N, X, Y, Z, Cin)
    return np.moveaxis(gx, -1, 1), gw, g.sum(axis=(0, 2, 3, 4))


def pointwise(x, w, b):
    """1x1x1 convolution, ``w`` of shape (Cout, Cin)."""
    out = np.tensordot(w, x, axes=([1], [1]))  # (Cout, N, X, Y, Z)
    return np.moveaxis(out, 0, 1) + b[None, :, None, None, None]


def pointwise_backward(g, x, w):
    gw = np.tensordot(g, x, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    gx = np.moveaxis(np.tensordot(w, g, axes=([0], [1])), 0, 1)
    return gx, gw, g.sum(axis=(0, 2, 3, 4))


def softmax(z, axis=1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
