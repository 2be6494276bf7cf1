"""Reproducible stream splitting on top of the Philox counter-based generator.

Every stochastic stage of the pipeline derives its generator from the master
seed plus a structured path, so results are deterministic regardless of how
work is scheduled across processes.

Stream paths:

    (SIMULATE,)                 synthetic data generation
    (SUBSAMPLE, m)              subsample draw m
    (MCMC, m, chain)            one subposterior chain
    (WEIGHTS, m, k)             importance-weight particles for draw k
    (SIR, m)                    resampling for subsample m
    (AUDIT,)                    robustness-audit subset selection
"""
from __future__ import annotations

import numpy as np

# Stage tags for substream paths.
SIMULATE = 1
SUBSAMPLE = 2
MCMC = 3
WEIGHTS = 4
SIR = 5
AUDIT = 6


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the given (seed, path) pair."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))
