# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Philox4x32-10 counters and the affine Euler-Maruyama step.

Both functions have bit-identical pure-numpy twins in ``_kernels_py``.
"""

import numpy as np

from libc.stdint cimport uint32_t, uint64_t, int64_t

BACKEND = "compiled"

cdef uint32_t M0 = 0xD2511F53u
cdef uint32_t M1 = 0xCD9E8D57u
cdef uint32_t W0 = 0x9E3779B9u
cdef uint32_t W1 = 0xBB67AE85u
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint32_t x0 = c[0], x1 = c[1], x2 = c[2], x3 = c[3]
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        p0 = <uint64_t>M0 * x0
        p1 = <uint64_t>M1 * x2
        x0 = (<uint32_t>(p1 >> 32)) ^ x1 ^ k0
        x1 = <uint32_t>p1
        x2 = (<uint32_t>(p0 >> 32)) ^ x3 ^ k1
        x3 = <uint32_t>p0
        k0 = k0 + W0
        k1 = k1 + W1
    c[0] = x0
    c[1] = x1
    c[2] = x2
    c[3] = x3


def philox4x32(ctr, key):
    """Philox4x32-10 block function over rows of ``ctr`` (n, 4) with ``key`` (2,)."""
    cdef uint32_t[:, ::1] c = np.ascontiguousarray(ctr, dtype=np.uint32).copy()
    cdef uint32_t[::1] k = np.ascontiguousarray(key, dtype=np.uint32)
    cdef Py_ssize_t i, n = c.shape[0]
    with nogil:
        for i in range(n):
            _philox(&c[i, 0], k[0], k[1])
    return np.asarray(c)


def uniform_pairs(uint64_t seed, uint32_t purpose, uint32_t step, paths, Py_ssize_t n_streams):
    """Two uniform arrays ``(u1, u2)`` of shape (len(paths), n_streams).

    Counter ``(step, stream, path, purpose)`` under key ``seed``;
    ``u1`` lies in (0, 1) and ``u2`` in [0, 1).
    """
    cdef int64_t[::1] p = np.ascontiguousarray(paths, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0], i, s
    out1 = np.empty((n, n_streams))
    out2 = np.empty((n, n_streams))
    cdef double[:, ::1] u1 = out1
    cdef double[:, ::1] u2 = out2
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t c[4]
    with nogil:
        for i in range(n):
            for s in range(n_streams):
                c[0] = step
                c[1] = <uint32_t>s
                c[2] = <uint32_t>p[i]
                c[3] = purpose
                _philox(c, k0, k1)
                u1[i, s] = ((<double>(((<uint64_t>c[0] << 32) | c[1]) >> 11)) + 0.5) * TWO_M53
                u2[i, s] = (<double>(((<uint64_t>c[2] << 32) | c[3]) >> 11)) * TWO_M53
    return out1, out2


def affine_em_step(X, G, g, double dt, double scale, xi):
    """``X + dt (G X + g) + scale xi`` row by row, fixed summation order."""
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] e = np.ascontiguousarray(xi, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], D = x.shape[1], p, a, k
    out = np.empty((n, D))
    cdef double[:, ::1] o = out
    cdef double acc
    with nogil:
        for p in range(n):
            for a in range(D):
                acc = 0.0
                for k in range(D):
                    acc = acc + A[a, k] * x[p, k]
                o[p, a] = x[p, a] + dt * (acc + b[a]) + scale * e[p, a]
    return out
