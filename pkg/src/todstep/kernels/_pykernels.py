"""Pure-numpy kernel backend.

Vectorized twin of the compiled backend in ``_ckernels.pyx``.  Both produce
bit-identical feature ids (same hash, same packing) and accumulate in the
same index order, so training runs are reproducible across backends.
"""

import numpy as np

from .hashing import (
    TAG_BIAS,
    TAG_CONTEXT,
    TAG_MEMBER,
    TAG_PREV1,
    TAG_PREV2,
    TAG_PREV3,
    TAG_REGION,
)

_MUL1 = np.uint64(0xFF51AFD7ED558CCD)
_MUL2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
_S29 = np.uint64(29)
_S58 = np.uint64(58)


def _mix64(x):
    x = x ^ (x >> _S33)
    x = x * _MUL1
    x = x ^ (x >> _S33)
    x = x * _MUL2
    x = x ^ (x >> _S33)
    return x


def _hash_column(tag, a, b, mask):
    key = (np.uint64(tag) << _S58) ^ (a << _S29) ^ b
    return (_mix64(key) & mask).astype(np.int64)


def hash_features(cand_ids, member, ctx, prev1, prev2, prev3, region, bits):
    """Feature-id matrix for a set of candidate tokens.

    cand_ids: int64[n] token ids to score; member/ctx: int8[vocab] per-token
    goal-membership and parse-context kinds.  Returns int64[n, 7].
    """
    mask = np.uint64((1 << bits) - 1)
    a = cand_ids.astype(np.uint64)
    mem = member[cand_ids].astype(np.uint64)
    ck = ctx[cand_ids].astype(np.uint64)
    reg = np.uint64(region)
    out = np.empty((len(cand_ids), 7), dtype=np.int64)
    out[:, 0] = _hash_column(TAG_PREV1, np.uint64(prev1), a, mask)
    out[:, 1] = _hash_column(TAG_PREV2, np.uint64(prev2), a, mask)
    out[:, 2] = _hash_column(TAG_PREV3, np.uint64(prev3), a, mask)
    out[:, 3] = _hash_column(TAG_REGION, reg, a, mask)
    out[:, 4] = _hash_column(TAG_MEMBER, mem, reg, mask)
    out[:, 5] = _hash_column(TAG_CONTEXT, ck, np.uint64(0), mask)
    out[:, 6] = _hash_column(TAG_BIAS, a, np.uint64(0), mask)
    return out


def gather_scores(weights, feats):
    """Sum of weights at each row of feature ids; float64[n]."""
    return weights[feats].sum(axis=1)


def scatter_add(weights, feats, coefs):
    """In-place weights[feats[i, j]] += coefs[i] for every i, j."""
    np.add.at(weights, feats.ravel(), np.repeat(coefs, feats.shape[1]))
