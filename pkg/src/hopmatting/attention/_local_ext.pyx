# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled local-window attention kernels (same contract as _local_py)."""

import numpy as np
from libc.math cimport exp, INFINITY


cdef inline int _iabs(int x) nogil:
    return -x if x < 0 else x


def forward(double[:, :, :, ::1] q, double[:, :, :, ::1] v, pe, int k):
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], W = q.shape[2], C = q.shape[3]
    cdef int r = k // 2
    cdef int kk = k * k
    cdef bint has_pe = pe is not None
    cdef double[:, :, ::1] pev
    if has_pe:
        pev = np.ascontiguousarray(pe, dtype=np.float64)
    else:
        pev = np.zeros((1, 1, C), dtype=np.float64)
    out_arr = np.zeros((B, H, W, C), dtype=np.float64)
    attn_arr = np.zeros((B, H, W, kk), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, :, ::1] attn = attn_arr
    cdef double[::1] logit = np.empty(kk, dtype=np.float64)
    cdef Py_ssize_t b, i, j, ch
    cdef int dr, dc, o, y, x
    cdef double s, m, tot, a
    with nogil:
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    m = -INFINITY
                    o = 0
                    for dr in range(-r, r + 1):
                        for dc in range(-r, r + 1):
                            y = <int>i + dr
                            x = <int>j + dc
                            if y < 0 or y >= H or x < 0 or x >= W:
                                logit[o] = -INFINITY
                            else:
                                s = 0.0
                                if has_pe:
                                    for ch in range(C):
                                        s = s + q[b, i, j, ch] * (q[b, y, x, ch] + pev[_iabs(dr), _iabs(dc), ch])
                                else:
                                    for ch in range(C):
                                        s = s + q[b, i, j, ch] * q[b, y, x, ch]
                                logit[o] = s
                                if s > m:
                                    m = s
                            o = o + 1
                    tot = 0.0
                    for o in range(kk):
                        if logit[o] == -INFINITY:
                            attn[b, i, j, o] = 0.0
                        else:
                            a = exp(logit[o] - m)
                            attn[b, i, j, o] = a
                            tot = tot + a
                    for o in range(kk):
                        attn[b, i, j, o] = attn[b, i, j, o] / tot
                    o = 0
                    for dr in range(-r, r + 1):
                        for dc in range(-r, r + 1):
                            y = <int>i + dr
                            x = <int>j + dc
                            if 0 <= y < H and 0 <= x < W:
                                a = attn[b, i, j, o]
                                for ch in range(C):
                                    out[b, i, j, ch] = out[b, i, j, ch] + a * v[b, y, x, ch]
                            o = o + 1
    return out_arr, attn_arr


def backward(double[:, :, :, ::1] q, double[:, :, :, ::1] v, pe, int k,
             double[:, :, :, ::1] attn, double[:, :, :, ::1] g):
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], W = q.shape[2], C = q.shape[3]
    cdef int r = k // 2
    cdef int kk = k * k
    cdef bint has_pe = pe is not None
    cdef double[:, :, ::1] pev
    if has_pe:
        pev = np.ascontiguousarray(pe, dtype=np.float64)
        dpe_arr = np.zeros_like(np.asarray(pe, dtype=np.float64))
    else:
        pev = np.zeros((1, 1, C), dtype=np.float64)
        dpe_arr = np.zeros((1, 1, C), dtype=np.float64)
    cdef double[:, :, ::1] dpe = dpe_arr
    dq_arr = np.zeros((B, H, W, C), dtype=np.float64)
    dv_arr = np.zeros((B, H, W, C), dtype=np.float64)
    cdef double[:, :, :, ::1] dq = dq_arr
    cdef double[:, :, :, ::1] dv = dv_arr
    cdef double[::1] da = np.empty(kk, dtype=np.float64)
    cdef Py_ssize_t b, i, j, ch
    cdef int dr, dc, o, y, x, ar, ac
    cdef double s, dot, a, dl, qc
    with nogil:
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    dot = 0.0
                    o = 0
                    for dr in range(-r, r + 1):
                        for dc in range(-r, r + 1):
                            y = <int>i + dr
                            x = <int>j + dc
                            da[o] = 0.0
                            if 0 <= y < H and 0 <= x < W:
                                a = attn[b, i, j, o]
                                s = 0.0
                                for ch in range(C):
                                    s = s + g[b, i, j, ch] * v[b, y, x, ch]
                                    dv[b, y, x, ch] = dv[b, y, x, ch] + a * g[b, i, j, ch]
                                da[o] = s
                                dot = dot + a * s
                            o = o + 1
                    o = 0
                    for dr in range(-r, r + 1):
                        for dc in range(-r, r + 1):
                            y = <int>i + dr
                            x = <int>j + dc
                            if 0 <= y < H and 0 <= x < W:
                                dl = attn[b, i, j, o] * (da[o] - dot)
                                ar = _iabs(dr)
                                ac = _iabs(dc)
                                for ch in range(C):
                                    qc = q[b, i, j, ch]
                                    if has_pe:
                                        dq[b, i, j, ch] = dq[b, i, j, ch] + dl * (q[b, y, x, ch] + pev[ar, ac, ch])
                                        dpe[ar, ac, ch] = dpe[ar, ac, ch] + dl * qc
                                    else:
                                        dq[b, i, j, ch] = dq[b, i, j, ch] + dl * q[b, y, x, ch]
                                    dq[b, y, x, ch] = dq[b, y, x, ch] + dl * qc
                            o = o + 1
    return dq_arr, dv_arr, (dpe_arr if has_pe else None)
