# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels (same padding, stride 1).

Row-oriented direct form: all nine kernel taps are fused into a single pass
over each image row, with a shared zero row standing in for the padding
above and below the image. The row primitives live in _conv_rows.h with
restrict-qualified pointers so the C compiler can vectorize them.
Accumulation order is fixed by the loop structure, so every call is
bit-reproducible.
"""

import numpy as np


cdef extern from "_conv_rows.h" nogil:
    void row_taps9_f32(float *out, const float *up, const float *mid, const float *dn,
                       const float *w, Py_ssize_t wd)
    void row_taps9_f64(double *out, const double *up, const double *mid, const double *dn,
                       const double *w, Py_ssize_t wd)
    void row_prod9_f32(float *b, const float *dyr, const float *up, const float *mid,
                       const float *dn, Py_ssize_t wd)
    void row_prod9_f64(double *b, const double *dyr, const double *up, const double *mid,
                       const double *dn, Py_ssize_t wd)
    void row_acc_f32(float *acc, const float *src, Py_ssize_t wd)
    void row_acc_f64(double *acc, const double *src, Py_ssize_t wd)

ctypedef fused real_t:
    float
    double

BACKEND = "native"


cdef inline void _row_taps9(real_t *out, const real_t *up, const real_t *mid,
                            const real_t *dn, const real_t *w, Py_ssize_t wd) nogil:
    if real_t is float:
        row_taps9_f32(out, up, mid, dn, w, wd)
    else:
        row_taps9_f64(out, up, mid, dn, w, wd)


cdef inline void _row_prod9(real_t *b, const real_t *dyr, const real_t *up,
                            const real_t *mid, const real_t *dn, Py_ssize_t wd) nogil:
    if real_t is float:
        row_prod9_f32(b, dyr, up, mid, dn, wd)
    else:
        row_prod9_f64(b, dyr, up, mid, dn, wd)


cdef inline void _row_acc(real_t *acc, const real_t *src, Py_ssize_t wd) nogil:
    if real_t is float:
        row_acc_f32(acc, src, wd)
    else:
        row_acc_f64(acc, src, wd)


def conv2d_forward(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] w, bias, real_t[:, :, :, ::1] y):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0]
    cdef Py_ssize_t n, co, ci, i, j
    cdef real_t bv
    cdef real_t *yrow
    cdef const real_t *mid
    cdef real_t[::1] bview
    cdef bint has_bias = bias is not None
    if has_bias:
        bview = bias
    zeros = np.zeros(wd, dtype=np.float32 if real_t is float else np.float64)
    cdef real_t[::1] zview = zeros
    cdef const real_t *zrow = &zview[0]
    with nogil:
        for n in range(b):
            for co in range(o):
                bv = bview[co] if has_bias else <real_t> 0
                for i in range(h):
                    yrow = &y[n, co, i, 0]
                    for j in range(wd):
                        yrow[j] = bv
                for ci in range(c):
                    for i in range(h):
                        mid = &x[n, ci, i, 0]
                        _row_taps9(&y[n, co, i, 0],
                                   mid - wd if i > 0 else zrow,
                                   mid,
                                   mid + wd if i < h - 1 else zrow,
                                   &w[co, ci, 0, 0], wd)


def conv2d_backward_input(real_t[:, :, :, ::1] dy, real_t[:, :, :, ::1] w, real_t[:, :, :, ::1] dx):
    cdef Py_ssize_t b = dy.shape[0], o = dy.shape[1], h = dy.shape[2], wd = dy.shape[3]
    cdef Py_ssize_t c = w.shape[1]
    cdef Py_ssize_t n, co, ci, i, j
    cdef real_t *drow
    cdef const real_t *mid
    cdef const real_t *wp
    # the input gradient is a correlation with the 180-degree rotated kernel
    scratch = np.zeros(9 + wd, dtype=np.float32 if real_t is float else np.float64)
    cdef real_t[::1] sview = scratch
    cdef real_t *wflip = &sview[0]
    cdef const real_t *zrow = &sview[9]
    with nogil:
        for n in range(b):
            for ci in range(c):
                for i in range(h):
                    drow = &dx[n, ci, i, 0]
                    for j in range(wd):
                        drow[j] = <real_t> 0
                for co in range(o):
                    wp = &w[co, ci, 0, 0]
                    for j in range(9):
                        wflip[j] = wp[8 - j]
                    for i in range(h):
                        mid = &dy[n, co, i, 0]
                        _row_taps9(&dx[n, ci, i, 0],
                                   mid - wd if i > 0 else zrow,
                                   mid,
                                   mid + wd if i < h - 1 else zrow,
                                   wflip, wd)


def conv2d_backward_params(real_t[:, :, :, ::1] dy, real_t[:, :, :, ::1] x,
                           real_t[:, :, :, ::1] dw, real_t[::1] db):
    cdef Py_ssize_t b = dy.shape[0], o = dy.shape[1], h = dy.shape[2], wd = dy.shape[3]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t n, co, ci, i, j, k
    cdef real_t s
    cdef const real_t *mid
    # per-column partial sums keep the inner loops elementwise independent:
    # 9 tap buffers, one bias buffer, and a shared zero row
    scratch = np.zeros(11 * wd, dtype=np.float32 if real_t is float else np.float64)
    cdef real_t[::1] buf = scratch
    cdef real_t *taps = &buf[0]
    cdef real_t *bb = &buf[9 * wd]
    cdef const real_t *zrow = &buf[10 * wd]
    with nogil:
        for co in range(o):
            for j in range(wd):
                bb[j] = <real_t> 0
            for n in range(b):
                for i in range(h):
                    _row_acc(bb, &dy[n, co, i, 0], wd)
            s = <real_t> 0
            for j in range(wd):
                s += bb[j]
            db[co] = s
            for ci in range(c):
                for j in range(9 * wd):
                    taps[j] = <real_t> 0
                for n in range(b):
                    for i in range(h):
                        mid = &x[n, ci, i, 0]
                        _row_prod9(taps, &dy[n, co, i, 0],
                                   mid - wd if i > 0 else zrow,
                                   mid,
                                   mid + wd if i < h - 1 else zrow,
                                   wd)
                for k in range(9):
                    s = <real_t> 0
                    for j in range(wd):
                        s += taps[k * wd + j]
                    dw[co, ci, k // 3, k % 3] = s
