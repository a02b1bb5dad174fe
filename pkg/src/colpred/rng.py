"""Seed derivation helpers.

All randomness in the package flows through Philox (counter-based), so any
quantity is reproducible from a root seed plus a label path, independent of
how work is scheduled across workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    # crc32 rather than hash(): stable across processes and interpreter runs
    return zlib.crc32(label.encode("utf-8"))


def derive(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, label, indices)."""
    ss = np.random.SeedSequence((int(seed), _label_key(label), *[int(i) for i in indices]))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, label: str, *indices: int) -> int:
    """A child integer seed, for handing whole sub-pipelines their own root."""
    ss = np.random.SeedSequence((int(seed), _label_key(label), *[int(i) for i in indices]))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))
