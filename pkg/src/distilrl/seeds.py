"""Deterministic seed derivation.

Every phase, worker, and parameter build gets its seed from the master seed
plus a structural key (never from "how many draws happened so far"), so
inserting or removing a phase upstream cannot perturb the seeds of later
phases. That property is what makes the no-pretraining baseline run an exact
suffix of the corresponding full run.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_ints(parts) -> tuple[int, ...]:
    out: list[int] = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode()))
        else:
            out.append(int(p) & 0xFFFFFFFF)
    return tuple(out)


def derive_seed(master_seed: int, *key) -> int:
    """Stable 63-bit seed for the (master, key) pair."""
    ss = np.random.SeedSequence(master_seed, spawn_key=_as_ints(key))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0] >> 1)


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *key))
