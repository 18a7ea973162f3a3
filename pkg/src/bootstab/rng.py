"""Seed derivation for every random choice in the package.

All randomness flows from a single root seed through named child streams so
that an entire experiment is reproduced by one integer. The derivation rule:

    child_seed(root, *path)

builds a ``numpy.random.SeedSequence`` with ``entropy=root`` and
``spawn_key=path``, where string path parts are encoded as their CRC-32 and
integer parts are used as-is (they must fit in 32 bits). The child seed is the
first 64-bit word of that sequence's state. SeedSequence hashing is fixed and
platform-independent, so the same (root, path) yields the same child seed on
any machine.

Purpose paths used by the package (one child stream per purpose):

    ("simulate",)                       dataset generation
    ("split",)                          train/test shuffle
    ("pool", m)                         root for bootstrap member m, with
                                        sub-purposes "bootstrap", "init",
                                        "shuffle"
    ("target",)                         root for the standard/stable model,
                                        sub-purposes "init", "shuffle",
                                        "subsample"
    ("replicate", r)                    per-replicate experiment root
    ("background",) ("explain-rows",)   attribution sampling
    ("attribution", k, i)               permutation stream per (member, row)
"""

import zlib

import numpy as np


def _encode(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if not 0 <= value < 2**32:
            raise ValueError(f"integer path part out of range [0, 2^32): {part}")
        return value
    raise TypeError(f"seed path parts must be str or int, got {type(part).__name__}")


def child_seed(root: int, *path) -> int:
    """Derive the 64-bit child seed for a named purpose under ``root``."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_encode(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a (usually derived) integer seed."""
    return np.random.default_rng(int(seed))
