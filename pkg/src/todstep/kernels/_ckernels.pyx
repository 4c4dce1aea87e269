# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: fused feature hashing, score gathering and
gradient scatter for the token-scoring hot loop.

Must stay bit-identical to ``_pykernels``; the hash constants and packing
live in ``hashing.py`` and are duplicated here as C constants.
"""

import numpy as np

from libc.stdint cimport int8_t, int64_t, uint64_t

cdef uint64_t MUL1 = 0xFF51AFD7ED558CCDULL
cdef uint64_t MUL2 = 0xC4CEB9FE1A85EC53ULL

cdef enum:
    TAG_PREV1 = 1
    TAG_PREV2 = 2
    TAG_PREV3 = 3
    TAG_REGION = 4
    TAG_MEMBER = 5
    TAG_CONTEXT = 6
    TAG_BIAS = 7


cdef inline uint64_t mix64(uint64_t x) nogil:
    x ^= x >> 33
    x *= MUL1
    x ^= x >> 33
    x *= MUL2
    x ^= x >> 33
    return x


cdef inline int64_t fid(uint64_t tag, uint64_t a, uint64_t b, uint64_t mask) nogil:
    cdef uint64_t key = (tag << 58) ^ (a << 29) ^ b
    return <int64_t> (mix64(key) & mask)


def hash_features(cand_ids, member, ctx, prev1, prev2, prev3, region, bits):
    """Feature-id matrix for a set of candidate tokens; int64[n, 7]."""
    cdef const int64_t[::1] cids = np.ascontiguousarray(cand_ids, dtype=np.int64)
    cdef const int8_t[::1] mem = member
    cdef const int8_t[::1] ck = ctx
    cdef Py_ssize_t n = cids.shape[0]
    out_arr = np.empty((n, 7), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef uint64_t mask = (<uint64_t> 1 << <int> bits) - 1
    cdef uint64_t p1 = <uint64_t> prev1
    cdef uint64_t p2 = <uint64_t> prev2
    cdef uint64_t p3 = <uint64_t> prev3
    cdef uint64_t reg = <uint64_t> region
    cdef Py_ssize_t i
    cdef uint64_t a
    with nogil:
        for i in range(n):
            a = <uint64_t> cids[i]
            out[i, 0] = fid(TAG_PREV1, p1, a, mask)
            out[i, 1] = fid(TAG_PREV2, p2, a, mask)
            out[i, 2] = fid(TAG_PREV3, p3, a, mask)
            out[i, 3] = fid(TAG_REGION, reg, a, mask)
            out[i, 4] = fid(TAG_MEMBER, <uint64_t> mem[cids[i]], reg, mask)
            out[i, 5] = fid(TAG_CONTEXT, <uint64_t> ck[cids[i]], 0, mask)
            out[i, 6] = fid(TAG_BIAS, a, 0, mask)
    return out_arr


def gather_scores(weights, feats):
    """Sum of weights at each row of feature ids; float64[n]."""
    cdef const double[::1] w = weights
    cdef const int64_t[:, ::1] f = feats
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t m = f.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += w[f[i, j]]
            out[i] = s
    return out_arr


def scatter_add(weights, feats, coefs):
    """In-place weights[feats[i, j]] += coefs[i] for every i, j."""
    cdef double[::1] w = weights
    cdef const int64_t[:, ::1] f = feats
    cdef const double[::1] c = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t m = f.shape[1]
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                w[f[i, j]] += c[i]
