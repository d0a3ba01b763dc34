"""Keyed random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, label, *extra)`` so that environment, policy, feature and
trajectory draws never share state and are reproducible across machines.
"""
from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, label, *extra)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed), _label_key(label), *(int(e) for e in extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
