"""Deterministic seed derivation so every stochastic component can be replayed."""

import hashlib

import numpy as np


def derive_seed(base, *tags):
    """Stable 64-bit seed from a base seed and a sequence of hashable tags.

    Uses SHA-256 over the repr of the inputs, so results are identical across
    processes and platforms (unlike the builtin salted ``hash``).
    """
    h = hashlib.sha256()
    h.update(repr(int(base)).encode())
    for tag in tags:
        h.update(b"|")
        h.update(repr(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(base, *tags):
    """numpy Generator seeded via :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(base, *tags))
