"""Deterministic, splittable random streams.

Every stochastic operation in the package takes an explicit
``numpy.random.Generator``. Streams are derived from a master seed plus a
tuple of string/int tokens, hashed through SHA-256 into a Philox
counter-based generator, so independent stages (truth construction, each
data draw, each Monte Carlo pass) get non-overlapping streams and any
stage can be re-derived in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*tokens) -> tuple[int, ...]:
    """Map arbitrary tokens to four uint32 words via SHA-256."""
    canon = "\x1f".join(repr(t) for t in tokens).encode()
    digest = hashlib.sha256(canon).digest()
    return tuple(int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(4))


def derive_rng(master_seed: int, *tokens) -> np.random.Generator:
    """Independent Philox stream for (master_seed, *tokens)."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=stream_key(*tokens))
    return np.random.Generator(np.random.Philox(seq))
