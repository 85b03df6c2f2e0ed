"""Deterministic seed derivation shared by every stochastic stage.

All randomness in the package flows through numpy's counter-based Philox
generator, keyed by integers derived here. Deriving from a hash of string
parts (rather than e.g. seed arithmetic) keeps streams independent across
stages and identical across platforms, interpreter runs, and worker pools.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def derive_seed(*parts: object) -> int:
    """Map an ordered tuple of hashable labels to a stable 64-bit seed."""
    blob = _SEP.join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def philox(*parts: object) -> np.random.Generator:
    """A fresh Generator keyed by the derived seed of ``parts``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(*parts)))
