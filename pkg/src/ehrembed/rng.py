"""Counter-based splittable random streams.

Every source of randomness in the package draws from a Philox generator
keyed by (global seed, purpose tag). Streams for distinct tags are
independent, and a stream's output does not depend on thread scheduling
or on how many draws other streams made.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_hash(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def purpose_rng(seed: int, tag: str) -> np.random.Generator:
    """Independent generator for one (seed, purpose) pair."""
    key = np.array([seed & _MASK64, tag_hash(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, tag: str) -> int:
    """Stable 63-bit sub-seed, for APIs that want an int rather than a stream."""
    return (seed ^ tag_hash(tag)) & (_MASK64 >> 1)
