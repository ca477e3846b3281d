"""Pure numpy implementations of the convolution and pooling kernels.

Same signatures and results (up to float rounding) as the compiled
``_ckernels`` module.  Convolutions go through an im2col view and a single
``tensordot`` so most work lands in BLAS.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(xp, kh, kw, stride, oh, ow):
    # (N, C, H, W) padded input -> read-only (N, C, OH, OW, KH, KW) view
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x, w, bias, stride, pad):
    _, _, h, wd = x.shape
    _, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    cols = _windows(_pad(x, pad), kh, kw, stride, oh, ow)
    # contract over (C, KH, KW) -> (N, OH, OW, O)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def conv2d_backward_input(gy, w, height, width, stride, pad):
    n, _, oh, ow = gy.shape
    _, c, kh, kw = w.shape
    # (N, OH, OW, C, KH, KW)
    cols = np.tensordot(gy, w, axes=([1], [0]))
    gxp = np.zeros((n, c, height + 2 * pad, width + 2 * pad), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return np.ascontiguousarray(gxp[:, :, pad:pad + height, pad:pad + width])


def conv2d_backward_weight(x, gy, kh, kw, stride, pad):
    _, _, oh, ow = gy.shape
    cols = _windows(_pad(x, pad), kh, kw, stride, oh, ow)
    # contract over (N, OH, OW) -> (O, C, KH, KW)
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(gw)


def maxpool2d_forward(x, window, stride):
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = _windows(x, window, window, stride, oh, ow).reshape(n, c, oh, ow, window * window)
    local = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    return np.ascontiguousarray(y), (rows * w + cols).astype(np.int64)


def maxpool2d_backward(gy, arg, height, width):
    n, c, _, _ = gy.shape
    gx = np.zeros((n, c, height * width), dtype=gy.dtype)
    flat_arg = arg.reshape(n, c, -1)
    flat_gy = gy.reshape(n, c, -1)
    nn_idx = np.arange(n)[:, None, None]
    cc_idx = np.arange(c)[None, :, None]
    np.add.at(gx, (nn_idx, cc_idx, flat_arg), flat_gy)
    return gx.reshape(n, c, height, width)
