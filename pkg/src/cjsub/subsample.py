"""Drawing subsampled datasets and their complements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .data import CompressedDataset, Scheme, Slot, StratumKey, stratify


@dataclass(frozen=True)
class SubsamplePlan:
    fraction: float = 0.20
    scheme: Scheme = "first_last"
    M: int = 1
    master_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        if self.M < 1:
            raise ValueError("M must be >= 1")


def draw_subsample(data: CompressedDataset, plan: SubsamplePlan,
                   m: int) -> tuple[CompressedDataset, CompressedDataset]:
    """Draw subsample m: within each stratum, ceil(fraction * N_s) individuals
    are sampled uniformly without replacement. Returns (sampled, remaining);
    the two halves partition the data exactly."""
    if not 1 <= m <= plan.M:
        raise ValueError("subsample index out of range")
    rng = streams.substream(plan.master_seed, streams.SUBSAMPLE, m)
    strata = stratify(data, plan.scheme)
    taken: list[Slot] = []
    left: list[Slot] = []
    for key in strata:  # stratify() returns keys in deterministic order
        slots = strata[key]
        n_s = math.ceil(plan.fraction * len(slots))
        pick = rng.choice(len(slots), size=n_s, replace=False)
        mask = np.zeros(len(slots), dtype=bool)
        mask[pick] = True
        taken.extend(s for s, t in zip(slots, mask) if t)
        left.extend(s for s, t in zip(slots, mask) if not t)
    return data.subset(taken), data.subset(left)


def stratum_table(data: CompressedDataset, plan: SubsamplePlan) -> list[dict]:
    """Audit table: one row per stratum with its size and sample count."""
    strata = stratify(data, plan.scheme)
    rows = []
    for key, slots in strata.items():
        rows.append({
            "first": key.first,
            "last": key.last,
            "cohort_age": key.cohort_age,
            "size": len(slots),
            "sampled": math.ceil(plan.fraction * len(slots)),
        })
    return rows
