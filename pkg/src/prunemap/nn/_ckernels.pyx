# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution and pooling kernels.

Every routine is written against C-contiguous NCHW arrays and is generic
over float32/float64 through a fused type.  The forward convolution and
pooling are plain loop nests.  The two convolution gradients unfold each
sample into a column buffer and hand the contraction to BLAS ``gemm``.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real alpha, real* a, int lda,
                       real* b, int ldb, real beta, real* c, int ldc) noexcept nogil:
    # column-major BLAS; callers pass row-major buffers with the operands swapped
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    # first output index o with o*stride - pad + off >= 0
    cdef Py_ssize_t num = pad - off
    if num <= 0:
        return 0
    return (num + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t pad,
                           Py_ssize_t size, Py_ssize_t out_size) noexcept nogil:
    # one past the last output index o with o*stride - pad + off <= size - 1
    cdef Py_ssize_t num = size - 1 + pad - off
    if num < 0:
        return 0
    num = num // stride + 1
    return num if num < out_size else out_size


cdef void _im2col(real* x, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W, Py_ssize_t KH,
                  Py_ssize_t KW, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t OH,
                  Py_ssize_t OW, real* cols) noexcept nogil:
    # cols[(c, i, j), (oh, ow)] = padded x[c, oh*stride + i, ow*stride + j]
    cdef Py_ssize_t c, i, j, oh, ow, lo, hi, oh_lo, oh_hi
    cdef real* row = cols
    cdef real* src
    for c in range(C):
        for i in range(KH):
            oh_lo = _lo(i, stride, pad)
            oh_hi = _hi(i, stride, pad, H, OH)
            for j in range(KW):
                lo = _lo(j, stride, pad)
                hi = _hi(j, stride, pad, W, OW)
                for oh in range(OH):
                    if oh < oh_lo or oh >= oh_hi:
                        for ow in range(OW):
                            row[ow] = 0
                    else:
                        src = x + (c * H + oh * stride - pad + i) * W + j - pad
                        for ow in range(lo):
                            row[ow] = 0
                        if stride == 1:
                            for ow in range(lo, hi):
                                row[ow] = src[ow]
                        else:
                            for ow in range(lo, hi):
                                row[ow] = src[ow * stride]
                        for ow in range(hi, OW):
                            row[ow] = 0
                    row += OW


cdef void _col2im(real* cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W, Py_ssize_t KH,
                  Py_ssize_t KW, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t OH,
                  Py_ssize_t OW, real* gx) noexcept nogil:
    # adjoint of _im2col: scatter-add every column entry back to its pixel
    cdef Py_ssize_t c, i, j, oh, ow, lo, hi, oh_lo, oh_hi
    cdef real* row = cols
    cdef real* dst
    for c in range(C):
        for i in range(KH):
            oh_lo = _lo(i, stride, pad)
            oh_hi = _hi(i, stride, pad, H, OH)
            for j in range(KW):
                lo = _lo(j, stride, pad)
                hi = _hi(j, stride, pad, W, OW)
                for oh in range(oh_lo, oh_hi):
                    dst = gx + (c * H + oh * stride - pad + i) * W + j - pad
                    if stride == 1:
                        for ow in range(lo, hi):
                            dst[ow] += row[oh * OW + ow]
                    else:
                        for ow in range(lo, hi):
                            dst[ow * stride] += row[oh * OW + ow]
                row += OH * OW


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, bias,
                   int stride, int pad):
    # Direct loop nest rather than gemm: BLAS tiles round narrow channel
    # counts up, so a pruned layer would cost nearly as much as the
    # original.  Here inference time scales with multiply-accumulates.
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * pad - KH) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - KW) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((N, O, OH, OW), dtype=dtype)
    cdef real[:, :, :, ::1] y = out_arr
    cdef real[::1] b
    cdef Py_ssize_t n, o, c, i, j, oh, ow, ih, ow_lo, ow_hi, oh_lo, oh_hi, base
    cdef real wv
    cdef real* yrow
    cdef real* xrow
    if bias is not None:
        b = bias
        with nogil:
            for n in range(N):
                for o in range(O):
                    wv = b[o]
                    for oh in range(OH):
                        for ow in range(OW):
                            y[n, o, oh, ow] = wv
    with nogil:
        for n in range(N):
            for o in range(O):
                for c in range(C):
                    for i in range(KH):
                        oh_lo = _lo(i, stride, pad)
                        oh_hi = _hi(i, stride, pad, H, OH)
                        for j in range(KW):
                            ow_lo = _lo(j, stride, pad)
                            ow_hi = _hi(j, stride, pad, W, OW)
                            wv = w[o, c, i, j]
                            base = j - pad
                            for oh in range(oh_lo, oh_hi):
                                ih = oh * stride - pad + i
                                yrow = &y[n, o, oh, 0]
                                xrow = &x[n, c, ih, 0]
                                if stride == 1:
                                    for ow in range(ow_lo, ow_hi):
                                        yrow[ow] += wv * xrow[ow + base]
                                else:
                                    for ow in range(ow_lo, ow_hi):
                                        yrow[ow] += wv * xrow[ow * stride + base]
    return out_arr


def conv2d_backward_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                          int height, int width, int stride, int pad):
    cdef Py_ssize_t N = gy.shape[0], O = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t H = height, W = width
    cdef int P = OH * OW, K = C * KH * KW
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, H, W), dtype=dtype)
    if N == 0 or O == 0 or P == 0 or K == 0 or H == 0 or W == 0:
        return gx_arr
    cols_arr = np.empty((K, P), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            # cols (K, P) = w^T (K, O) @ gy[n] (O, P)
            _gemm(c'N', c'T', P, K, <int>O, 1, &gy[n, 0, 0, 0], P, &w[0, 0, 0, 0], K, 0, &cols[0, 0], P)
            _col2im(&cols[0, 0], C, H, W, KH, KW, stride, pad, OH, OW, &gx[n, 0, 0, 0])
    return gx_arr


def conv2d_backward_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] gy,
                           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t KH = kh, KW = kw
    cdef int P = OH * OW, K = C * KH * KW
    dtype = np.float32 if real is float else np.float64
    gw_arr = np.zeros((O, C, KH, KW), dtype=dtype)
    if N == 0 or O == 0 or P == 0 or K == 0:
        return gw_arr
    cols_arr = np.empty((K, P), dtype=dtype)
    cdef real[:, :, :, ::1] gw = gw_arr
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            _im2col(&x[n, 0, 0, 0], C, H, W, KH, KW, stride, pad, OH, OW, &cols[0, 0])
            # gw (O, K) += gy[n] (O, P) @ cols^T (P, K)
            _gemm(c'T', c'N', K, <int>O, P, 1, &cols[0, 0], P, &gy[n, 0, 0, 0], P, 1, &gw[0, 0, 0, 0], K)
    return gw_arr


def maxpool2d_forward(real[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H - window) // stride + 1
    cdef Py_ssize_t OW = (W - window) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((N, C, OH, OW), dtype=dtype)
    arg_arr = np.empty((N, C, OH, OW), dtype=np.int64)
    cdef real[:, :, :, ::1] y = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, ih, iw, best_idx
    cdef real best, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(OH):
                    for ow in range(OW):
                        ih = oh * stride
                        iw = ow * stride
                        best = x[n, c, ih, iw]
                        best_idx = ih * W + iw
                        for i in range(window):
                            for j in range(window):
                                v = x[n, c, ih + i, iw + j]
                                if v > best:
                                    best = v
                                    best_idx = (ih + i) * W + iw + j
                        y[n, c, oh, ow] = best
                        arg[n, c, oh, ow] = best_idx
    return out_arr, arg_arr


def maxpool2d_backward(real[:, :, :, ::1] gy, cnp.int64_t[:, :, :, ::1] arg,
                       int height, int width):
    cdef Py_ssize_t N = gy.shape[0], C = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t W = width
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, height, width), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, oh, ow, idx
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(OH):
                    for ow in range(OW):
                        idx = arg[n, c, oh, ow]
                        gx[n, c, idx // W, idx % W] += gy[n, c, oh, ow]
    return gx_arr
