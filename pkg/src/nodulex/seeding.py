"""Seed fan-out.

A single run seed is expanded into named sub-seeds with SHA-256 so that every
stochastic stage (phantom, split, init, augment, forest) draws from its own
stream. ``sub_seed(7, "forest")`` is stable across platforms and versions.
"""
import hashlib

import numpy as np

STAGES = ("phantom", "split", "init", "augment", "forest", "trials")


def sub_seed(seed, name):
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def rng_for(seed, name):
    return np.random.default_rng(sub_seed(seed, name))


def round_half_away(x):
    """Round to nearest integer, exact halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return out.astype(np.int64) if out.ndim else int(out)
