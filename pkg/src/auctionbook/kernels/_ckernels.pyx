# cython: language_level=3
"""Compiled versions of the hot kernels; see ``_pykernels`` for the contracts."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()


def solve_tridiagonal(double[::1] lower, double[::1] diag, double[::1] upper, double[::1] rhs):
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double m
    c = np.empty(n)
    x = np.empty(n)
    cdef double[::1] cp = c
    cdef double[::1] xp = x
    cp[0] = upper[0] / diag[0]
    xp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m if i < n - 1 else 0.0
        xp[i] = (rhs[i] - lower[i] * xp[i - 1]) / m
    for i in range(n - 2, -1, -1):
        xp[i] -= cp[i] * xp[i + 1]
    return x


def clearing_scan(sell, buy, long long mo_buy, long long mo_sell, long long ref_index):
    cdef cnp.int64_t[::1] s = np.ascontiguousarray(sell, dtype=np.int64)
    cdef cnp.int64_t[::1] b = np.ascontiguousarray(buy, dtype=np.int64)
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i
    cdef long long total_buy = mo_buy
    for i in range(n):
        total_buy += b[i]
    cdef long long supply = mo_sell
    cdef long long demand = total_buy
    cdef long long matched, surplus, dist
    cdef long long best_m = 0, best_s = 0, best_d = 0, best_diff = 0
    cdef Py_ssize_t best = -1
    for i in range(n):
        # supply counts sells at or below i, demand counts buys at or above i
        supply += s[i]
        if s[i] > 0 or b[i] > 0:
            matched = supply if supply < demand else demand
            surplus = supply - demand if supply > demand else demand - supply
            dist = i - ref_index if i > ref_index else ref_index - i
            if matched > 0 and (best < 0 or matched > best_m or
                                (matched == best_m and (surplus < best_s or
                                 (surplus == best_s and dist < best_d)))):
                best = i
                best_m = matched
                best_s = surplus
                best_d = dist
                best_diff = supply - demand
        demand -= b[i]
    if best < 0:
        return -1, 0, 0, 0
    return int(best), int(best_m), int(best_s), (best_diff > 0) - (best_diff < 0)


def rescaled_range(X):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t days = x.shape[0]
    cdef Py_ssize_t L = x.shape[1] - 1
    out = np.empty((days, L))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t d, t, s
    cdef double x0, xt, z, inc, y, ymax, ymin, s2
    for d in range(days):
        x0 = x[d, 0]
        z = 0.0
        for t in range(1, L + 1):
            inc = x[d, t] - x[d, t - 1]
            z += inc * inc
            xt = x[d, t] - x0
            ymax = -1e300
            ymin = 1e300
            for s in range(1, t + 1):
                y = (x[d, s] - x0) - (<double>s / t) * xt
                if y > ymax:
                    ymax = y
                if y < ymin:
                    ymin = y
            s2 = z / t - (xt / t) * (xt / t)
            if s2 > 0:
                o[d, t - 1] = (ymax - ymin) / sqrt(s2)
            else:
                o[d, t - 1] = NAN
    return out
