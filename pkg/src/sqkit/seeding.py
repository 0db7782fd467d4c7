"""Named, independent random streams.

Every source of randomness in the toolkit (splitting, subsampling,
parameter init, batch shuffling, export sampling, ...) draws from its own
named stream so that varying one component never perturbs another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the stream ``name`` under master ``seed``.

    Deterministic across platforms and processes: the stream identity is
    the SHA-256 of the name, mixed with the seed.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    stream = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, stream]))
