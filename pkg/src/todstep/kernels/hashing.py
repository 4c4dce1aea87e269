"""Deterministic feature hashing shared by all kernel backends.

Feature ids are produced by packing a (tag, a, b) triple into 64 bits and
running it through a murmur-style finalizer, then masking down to the
configured feature-space width.  Both the numpy and the compiled backend
must reproduce these ids bit for bit; the scalar reference lives here.
"""

MASK64 = (1 << 64) - 1
MASK29 = (1 << 29) - 1

_MUL1 = 0xFF51AFD7ED558CCD
_MUL2 = 0xC4CEB9FE1A85EC53

# Field tags for per-candidate features.
TAG_PREV1 = 1
TAG_PREV2 = 2
TAG_PREV3 = 3
TAG_REGION = 4
TAG_MEMBER = 5
TAG_CONTEXT = 6
TAG_BIAS = 7

# Field tags for state-only (value function) features.
TAG_V_PREV1 = 8
TAG_V_PREV2 = 9
TAG_V_PREV3 = 10
TAG_V_REGION = 11
TAG_V_BIAS = 12

N_CANDIDATE_FEATURES = 7
N_STATE_FEATURES = 5


def mix64(x: int) -> int:
    """Finalizer of MurmurHash3; avalanche-mixes a 64-bit value."""
    x &= MASK64
    x ^= x >> 33
    x = (x * _MUL1) & MASK64
    x ^= x >> 33
    x = (x * _MUL2) & MASK64
    x ^= x >> 33
    return x


def pack_key(tag: int, a: int, b: int) -> int:
    # a and b must fit in 29 bits; tags are small constants.
    return ((tag & 0x3F) << 58) ^ ((a & MASK29) << 29) ^ (b & MASK29)


def feature_id(tag: int, a: int, b: int, bits: int) -> int:
    return mix64(pack_key(tag, a, b)) & ((1 << bits) - 1)


def state_feature_ids(prev1: int, prev2: int, prev3: int, region: int, bits: int):
    """Hashed ids of the five state-only features used by the value baseline."""
    return (
        feature_id(TAG_V_PREV1, prev1, 0, bits),
        feature_id(TAG_V_PREV2, prev2, 0, bits),
        feature_id(TAG_V_PREV3, prev3, 0, bits),
        feature_id(TAG_V_REGION, region, 0, bits),
        feature_id(TAG_V_BIAS, 0, 0, bits),
    )
