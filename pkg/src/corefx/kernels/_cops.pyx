# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the ragged kernels.

Same contract as pyops: spans/segments are int64 index arrays with an
offsets vector, floats are float64, every segment row is non-empty.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND_NAME = "c"


def attention_forward(
    double[:, ::1] x,
    double[::1] u,
    cnp.int64_t[::1] starts,
    cnp.int64_t[::1] ends,
    cnp.int64_t[::1] offsets,
):
    cdef Py_ssize_t m = starts.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    xhat_arr = np.empty((m, d), dtype=np.float64)
    alpha_arr = np.empty(offsets[m] if m > 0 else 0, dtype=np.float64)
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] alpha = alpha_arr
    cdef Py_ssize_t i, t, k, base
    cdef Py_ssize_t s0, e0
    cdef double mx, z, a
    for i in range(m):
        s0 = starts[i]
        e0 = ends[i]
        base = offsets[i]
        mx = -INFINITY
        for t in range(s0, e0 + 1):
            if u[t] > mx:
                mx = u[t]
        z = 0.0
        for t in range(s0, e0 + 1):
            a = exp(u[t] - mx)
            alpha[base + (t - s0)] = a
            z += a
        for k in range(d):
            xhat[i, k] = 0.0
        for t in range(s0, e0 + 1):
            a = alpha[base + (t - s0)] / z
            alpha[base + (t - s0)] = a
            for k in range(d):
                xhat[i, k] += a * x[t, k]
    return xhat_arr, alpha_arr


def attention_backward(
    double[:, ::1] x,
    cnp.int64_t[::1] starts,
    cnp.int64_t[::1] ends,
    cnp.int64_t[::1] offsets,
    double[::1] alpha,
    double[:, ::1] dxhat,
):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t m = starts.shape[0]
    dx_arr = np.zeros((n, d), dtype=np.float64)
    du_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] du = du_arr
    cdef Py_ssize_t i, t, k, base, s0, e0
    cdef double a, dot, inner
    for i in range(m):
        s0 = starts[i]
        e0 = ends[i]
        base = offsets[i]
        inner = 0.0
        for t in range(s0, e0 + 1):
            a = alpha[base + (t - s0)]
            dot = 0.0
            for k in range(d):
                dot += dxhat[i, k] * x[t, k]
                dx[t, k] += a * dxhat[i, k]
            # stash the dalpha dot product in du, corrected below
            du[t] += a * dot
            inner += a * dot
        for t in range(s0, e0 + 1):
            du[t] -= alpha[base + (t - s0)] * inner
    return dx_arr, du_arr


def segment_softmax(double[::1] scores, cnp.int64_t[::1] offsets):
    cdef Py_ssize_t r = offsets.shape[0] - 1
    out_arr = np.empty(scores.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, t, lo, hi
    cdef double mx, z
    for i in range(r):
        lo = offsets[i]
        hi = offsets[i + 1]
        mx = -INFINITY
        for t in range(lo, hi):
            if scores[t] > mx:
                mx = scores[t]
        z = 0.0
        for t in range(lo, hi):
            out[t] = exp(scores[t] - mx)
            z += out[t]
        for t in range(lo, hi):
            out[t] /= z
    return out_arr


def marginal_log_loss(
    double[::1] scores, cnp.int64_t[::1] offsets, cnp.uint8_t[::1] gold
):
    cdef Py_ssize_t r = offsets.shape[0] - 1
    grad_arr = np.empty(scores.shape[0], dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double loss = 0.0
    cdef Py_ssize_t i, t, lo, hi
    cdef double mx, mx_g, z, z_g, e
    for i in range(r):
        lo = offsets[i]
        hi = offsets[i + 1]
        mx = -INFINITY
        mx_g = -INFINITY
        for t in range(lo, hi):
            if scores[t] > mx:
                mx = scores[t]
            if gold[t] and scores[t] > mx_g:
                mx_g = scores[t]
        z = 0.0
        z_g = 0.0
        for t in range(lo, hi):
            e = exp(scores[t] - mx)
            grad[t] = e
            z += e
            if gold[t]:
                z_g += exp(scores[t] - mx_g)
        loss += (log(z) + mx) - (log(z_g) + mx_g)
        for t in range(lo, hi):
            grad[t] /= z
            if gold[t]:
                grad[t] -= exp(scores[t] - mx_g) / z_g
    return loss, grad_arr


def pair_features(
    double[:, ::1] g,
    cnp.int64_t[::1] left,
    cnp.int64_t[::1] right,
    double[:, ::1] dist,
):
    cdef Py_ssize_t p = left.shape[0]
    cdef Py_ssize_t dg = g.shape[1]
    cdef Py_ssize_t dd = dist.shape[1]
    out_arr = np.empty((p, 3 * dg + dd), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, j, li, ri
    for k in range(p):
        li = left[k]
        ri = right[k]
        for j in range(dg):
            out[k, j] = g[li, j]
            out[k, dg + j] = g[ri, j]
            out[k, 2 * dg + j] = g[li, j] * g[ri, j]
        for j in range(dd):
            out[k, 3 * dg + j] = dist[k, j]
    return out_arr


def pair_features_backward(
    double[:, ::1] dout,
    double[:, ::1] g,
    cnp.int64_t[::1] left,
    cnp.int64_t[::1] right,
):
    cdef Py_ssize_t p = left.shape[0]
    cdef Py_ssize_t dg_ = g.shape[1]
    cdef Py_ssize_t dd = dout.shape[1] - 3 * dg_
    dg_arr = np.zeros((g.shape[0], dg_), dtype=np.float64)
    ddist_arr = np.empty((p, dd), dtype=np.float64)
    cdef double[:, ::1] dg = dg_arr
    cdef double[:, ::1] ddist = ddist_arr
    cdef Py_ssize_t k, j, li, ri
    for k in range(p):
        li = left[k]
        ri = right[k]
        for j in range(dg_):
            dg[li, j] += dout[k, j] + dout[k, 2 * dg_ + j] * g[ri, j]
            dg[ri, j] += dout[k, dg_ + j] + dout[k, 2 * dg_ + j] * g[li, j]
        for j in range(dd):
            ddist[k, j] = dout[k, 3 * dg_ + j]
    return dg_arr, ddist_arr


def scatter_add_rows(
    double[:, ::1] out, cnp.int64_t[::1] idx, double[:, ::1] rows
):
    cdef Py_ssize_t k, j
    cdef Py_ssize_t d = out.shape[1]
    for k in range(idx.shape[0]):
        for j in range(d):
            out[idx[k], j] += rows[k, j]
    return None
