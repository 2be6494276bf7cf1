"""Synthetic capture-recapture data under the random-effects survival model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import rng as streams
from .data import CaptureHistory, CompressedDataset
from .model import ModelSpec, Theta, _age_class_idx


def default_releases(total: int, T: int) -> dict[int, int]:
    """Equal release counts over occasions 1..T-2, remainder to the earliest
    occasions."""
    occs = list(range(1, T - 1)) if T > 2 else [1]
    base, extra = divmod(total, len(occs))
    return {t: base + (1 if i < extra else 0) for i, t in enumerate(occs)}


def simulate_histories(spec: ModelSpec, theta: Theta, eps: np.ndarray,
                       release_occasions: Sequence[int],
                       cohort_age: int | None,
                       rng: np.random.Generator) -> list[CaptureHistory]:
    """Simulate one history per individual, conditioning on first detection
    at the given release occasion and holding each random effect fixed.

    Individuals never detected again keep a single-detection history; the
    likelihood conditions on first capture so they stay informative.
    """
    T = spec.n_occasions
    f1 = np.asarray(release_occasions, dtype=np.int64)
    if np.any((f1 < 1) | (f1 >= T)):
        raise ValueError("releases must be at occasions 1..T-1")
    I = len(f1)
    eps = np.asarray(eps, float)
    f0 = f1 - 1

    ts = np.arange(T - 1)
    if spec.needs_cohort_age:
        if cohort_age is None:
            raise ValueError("model requires a cohort age for simulation")
        age_at_t = cohort_age + (ts[None, :] - f0[:, None])
        surv_idx = (_age_class_idx(age_at_t, spec.survival_age_bounds)
                    if spec.survival_structure == "age_time"
                    else np.zeros((I, T - 1), dtype=np.int64))
        cap_idx = (_age_class_idx(age_at_t + 1, spec.capture_age_bounds)
                   if spec.capture_structure == "age"
                   else np.zeros((I, T - 1), dtype=np.int64))
    else:
        surv_idx = np.zeros((I, T - 1), dtype=np.int64)
        cap_idx = np.zeros((I, T - 1), dtype=np.int64)

    eta = theta.alpha[surv_idx] + eps[:, None]
    if theta.beta.size:
        eta = eta + theta.beta[None, :]
    phi = expit(eta)                       # (I, T-1)
    pcap = theta.p[cap_idx]                # (I, T-1), detection at occasion t+1

    u_surv = rng.random((I, T - 1))
    u_det = rng.random((I, T - 1))

    x = np.zeros((I, T), dtype=np.uint8)
    x[np.arange(I), f0] = 1
    alive = np.ones(I, dtype=bool)
    for t in range(T - 1):
        started = f0 <= t
        alive &= ~started | (u_surv[:, t] < phi[:, t])
        detected = started & alive & (u_det[:, t] < pcap[:, t])
        x[detected, t + 1] = 1

    return [CaptureHistory(tuple(int(v) for v in row), cohort_age=cohort_age)
            for row in x]


def simulate_dataset(spec: ModelSpec, theta_true: Theta,
                     releases: Mapping[int, int], seed: int,
                     cohort_age: int | None = None) -> CompressedDataset:
    """Simulate a full dataset; deterministic given the seed."""
    theta_true.validate(spec)
    occs = sorted(releases)
    f1 = np.concatenate([np.full(releases[t], t, dtype=np.int64) for t in occs])
    rng = streams.substream(seed, streams.SIMULATE)
    eps = (theta_true.sigma_eps * rng.standard_normal(len(f1))
           if spec.random_effect else np.zeros(len(f1)))
    histories = simulate_histories(spec, theta_true, eps, f1, cohort_age, rng)
    return CompressedDataset.from_rows(histories)


@dataclass(frozen=True)
class TrueSummary:
    median_survival: float
    lower: float
    upper: float


def true_summary(theta: Theta) -> TrueSummary:
    """Population survival summary for the constant model: median and 2.5%
    quantiles of the survival distribution induced by the random effect."""
    a = float(theta.alpha[0])
    s = theta.sigma_eps
    return TrueSummary(
        median_survival=float(expit(a)),
        lower=float(expit(a - 1.96 * s)),
        upper=float(expit(a + 1.96 * s)),
    )
