"""Seed plumbing.

Every stream is derived from one root seed plus a path of string labels, so
independent subsystems never share or perturb each other's random state.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(seed: int, *path) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and a label path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
