"""Deterministic random streams.

Every random draw in the package flows from a single unsigned integer
seed. Each randomized subsystem (weight init, epoch shuffling, dropout
masks, dataset splits, synthetic data) consumes its own named stream
derived from that seed, so adding draws to one subsystem never perturbs
another and a single ``--seed`` reproduces a whole run.

Derivation scheme: ``SeedSequence(seed, spawn_key=(stream_id,))`` feeding
a PCG64 generator, with the fixed stream ids in ``STREAMS``.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "init": 0,
    "shuffle": 1,
    "dropout": 2,
    "split": 3,
    "synth": 4,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named deterministic generator for ``seed``."""
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}; expected one of {sorted(STREAMS)}")
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.PCG64(seq))
