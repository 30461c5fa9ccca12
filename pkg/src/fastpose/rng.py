"""Deterministic random streams derived from a single 64-bit seed.

All randomness in the toolkit flows through `derive(seed, label)`: the label
is hashed with SHA-256 and folded into a numpy SeedSequence spawn key, so
every (seed, label) pair names one reproducible PCG64 stream, independent of
call order and platform. There is no global entropy anywhere in the package.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive(seed: int, label: str) -> np.random.Generator:
    """Return the PCG64 generator named by (seed, label)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=words)))
