"""Named random streams derived from a single top-level seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(seed: int, *names) -> np.random.SeedSequence:
    """Seed sequence for the stream ``names`` under ``seed``.

    Names may be strings or integers, e.g. ``derive_seed(7, "adapt", 3)``.
    """
    return np.random.SeedSequence([int(seed), *(_key(n) for n in names)])


def derive_rng(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
