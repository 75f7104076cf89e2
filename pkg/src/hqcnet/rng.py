"""Named random streams derived from a single run seed.

Every source of randomness in a run (data synthesis, parameter init,
augmentation, shuffling) draws from its own stream so that e.g. changing the
augmentation policy never perturbs the initialization draws. Augmentation
additionally uses one stream per (epoch, sample) so that results do not depend
on the order in which samples are processed.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "augment", "shuffle")


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Generator for the named sub-stream of `seed`, plus optional counters."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng([int(seed), key, *map(int, counters)])
