"""Importance weights for the remaining data, SNIS normalization, and SIR.

The unnormalized weight of a draw is the marginal likelihood of the
remaining data at that draw, estimated by Monte Carlo over the random
effect: per history, average the conditional likelihood over N particles.
All accumulation is in log space; the per-history particle average is a
log-sum-exp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy.special import logsumexp, ndtri

from . import rng as streams
from .data import CompressedDataset, cap_multiplicity
from .likelihood import history_loglik
from .mcmc import DrawSet
from .model import Design, ModelSpec, Theta, theta_from_vector

Mode = Literal["iid", "stratified", "midpoint"]


class TotalDepletionError(RuntimeError):
    """Every importance weight underflowed to zero."""


@dataclass(frozen=True)
class TwoStepConfig:
    coarse_N: int = 25
    coarse_method: Literal["stratified", "stratified_midpoint"] = "stratified_midpoint"
    retain_fraction: float | None = 0.10
    retain_count: int | None = None
    fine_N: int = 250

    def __post_init__(self) -> None:
        if self.retain_count is None:
            if self.retain_fraction is None or not 0.0 < self.retain_fraction <= 1.0:
                raise ValueError("retain fraction must be in (0, 1]")

    def n_retained(self, K: int) -> int:
        n = (self.retain_count if self.retain_count is not None
             else math.ceil(self.retain_fraction * K))
        if n < 1:
            raise ValueError("retain count must be >= 1")
        return min(n, K)


@dataclass(frozen=True)
class WeightEstimatorConfig:
    method: Literal["naive", "stratified", "stratified_midpoint"] = "stratified"
    N: int = 100
    # Estimate per unique history (consistent, biased) instead of per
    # individual; optionally split very common histories first.
    unique_histories: bool = False
    multiplicity_cap: int | None = None
    two_step: TwoStepConfig | None = None
    threshold: float = 0.001

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("N must be >= 1")

    def mode(self) -> Mode:
        return {"naive": "iid", "stratified": "stratified",
                "stratified_midpoint": "midpoint"}[self.method]


@dataclass
class WeightedDraws:
    draws: DrawSet
    log_w_star: np.ndarray
    w: np.ndarray
    ess: float
    n_nonneg: int
    threshold: float = 0.001


def _particles(n_rows: int, N: int, sigma: float, mode: Mode,
               rng: np.random.Generator | None) -> np.ndarray:
    """Random-effect particles, (n_rows, N). Equal-probability strata of the
    N(0, sigma^2) distribution in stratified/midpoint modes; midpoint is
    deterministic."""
    j = np.arange(N)
    if mode == "iid":
        u = rng.random((n_rows, N))
    elif mode == "stratified":
        u = (j[None, :] + rng.random((n_rows, N))) / N
    elif mode == "midpoint":
        u = np.broadcast_to((j + 0.5) / N, (n_rows, N))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if sigma == 0.0:
        return np.zeros((n_rows, N))
    u = np.clip(u, 1e-15, 1.0 - 1e-15)
    return sigma * ndtri(u)


def _log_weight_design(theta: Theta, design: Design, N: int, mode: Mode,
                       rng: np.random.Generator | None) -> float:
    if design.n_rows == 0:
        return 0.0
    eps = _particles(design.n_rows, N, theta.sigma_eps, mode, rng)
    ll = history_loglik(theta, design, eps)                # (R, N)
    lw_rows = logsumexp(ll, axis=1) - math.log(N)
    return float(np.dot(design.mult.astype(float), lw_rows))


def log_weight_naive(theta: Theta, x2: CompressedDataset, spec: ModelSpec,
                     N: int, rng: np.random.Generator) -> float:
    """Unbiased estimator: independent iid particles per individual."""
    design = _expanded_or_empty(x2, spec)
    return _log_weight_design(theta, design, N, "iid", rng)


def log_weight_stratified(theta: Theta, x2: CompressedDataset, spec: ModelSpec,
                          N: int, mode: Literal["sampled", "midpoint"],
                          rng: np.random.Generator | None = None) -> float:
    """Stratified particles per individual; ``sampled`` stays unbiased,
    ``midpoint`` is deterministic (and biased)."""
    design = _expanded_or_empty(x2, spec)
    return _log_weight_design(theta, design, N,
                              "stratified" if mode == "sampled" else "midpoint",
                              rng)


def log_weight_repeated(theta: Theta, x2_capped: CompressedDataset,
                        spec: ModelSpec, N: int, mode: Mode,
                        rng: np.random.Generator | None) -> float:
    """One particle set per compressed entry, shared across its multiplicity
    via the exponent; consistent but biased for finite N."""
    if not x2_capped.entries:
        return 0.0
    design = Design.from_dataset(x2_capped, spec, expand=False)
    return _log_weight_design(theta, design, N, mode, rng)


def _expanded_or_empty(x2: CompressedDataset, spec: ModelSpec) -> Design:
    if not x2.entries:
        return Design(x=np.zeros((0, spec.n_occasions), np.uint8),
                      f0=np.zeros(0, int), l0=np.zeros(0, int),
                      mult=np.zeros(0, int),
                      surv_idx=np.zeros((0, spec.n_occasions - 1), int),
                      cap_idx=np.zeros((0, spec.n_occasions - 1), int),
                      T=spec.n_occasions)
    return Design.from_dataset(x2, spec, expand=True)


def _weight_design(x2: CompressedDataset, spec: ModelSpec,
                   config: WeightEstimatorConfig) -> Design:
    if config.unique_histories:
        data = x2
        if config.multiplicity_cap is not None:
            data = cap_multiplicity(x2, config.multiplicity_cap)
        if not data.entries:
            return _expanded_or_empty(data, spec)
        return Design.from_dataset(data, spec, expand=False)
    return _expanded_or_empty(x2, spec)


def estimate_log_weights(draws: DrawSet, x2: CompressedDataset, spec: ModelSpec,
                         config: WeightEstimatorConfig, master_seed: int,
                         m: int = 0) -> np.ndarray:
    """Single-pass log unnormalized weights for every draw; one particle
    substream per (subsample, draw)."""
    design = _weight_design(x2, spec, config)
    mode = config.mode()
    out = np.empty(draws.K)
    for k in range(draws.K):
        theta = theta_from_vector(draws.values[k], spec)
        rng = (streams.substream(master_seed, streams.WEIGHTS, m, k)
               if mode != "midpoint" else None)
        out[k] = _log_weight_design(theta, design, config.N, mode, rng)
    return out


def two_step_weights(draws: DrawSet, x2: CompressedDataset, spec: ModelSpec,
                     config: WeightEstimatorConfig, master_seed: int,
                     m: int = 0) -> WeightedDraws:
    """Coarse pass ranks all draws; only the retained top set gets fine-pass
    weights, everything else weight exactly 0."""
    ts = config.two_step
    if ts is None:
        raise ValueError("two_step not configured")
    design = _weight_design(x2, spec, config)
    coarse_mode: Mode = ("midpoint" if ts.coarse_method == "stratified_midpoint"
                         else "stratified")
    coarse = np.empty(draws.K)
    for k in range(draws.K):
        theta = theta_from_vector(draws.values[k], spec)
        rng = (streams.substream(master_seed, streams.WEIGHTS, m, k, 1)
               if coarse_mode != "midpoint" else None)
        coarse[k] = _log_weight_design(theta, design, ts.coarse_N, coarse_mode, rng)
    n_keep = ts.n_retained(draws.K)
    keep = np.argsort(coarse)[::-1][:n_keep]
    log_w = np.full(draws.K, -np.inf)
    mode = config.mode()
    for k in keep:
        theta = theta_from_vector(draws.values[k], spec)
        rng = (streams.substream(master_seed, streams.WEIGHTS, m, int(k))
               if mode != "midpoint" else None)
        log_w[k] = _log_weight_design(theta, design, ts.fine_N, mode, rng)
    w, ess, n_nonneg = snis_normalize(log_w, config.threshold)
    return WeightedDraws(draws=draws, log_w_star=log_w, w=w, ess=ess,
                         n_nonneg=n_nonneg, threshold=config.threshold)


def compute_weights(draws: DrawSet, x2: CompressedDataset, spec: ModelSpec,
                    config: WeightEstimatorConfig, master_seed: int,
                    m: int = 0) -> WeightedDraws:
    """Dispatch: two-step when configured, otherwise a single pass."""
    if config.two_step is not None:
        return two_step_weights(draws, x2, spec, config, master_seed, m)
    log_w = estimate_log_weights(draws, x2, spec, config, master_seed, m)
    w, ess, n_nonneg = snis_normalize(log_w, config.threshold)
    return WeightedDraws(draws=draws, log_w_star=log_w, w=w, ess=ess,
                         n_nonneg=n_nonneg, threshold=config.threshold)


def snis_normalize(log_w_star: np.ndarray,
                   threshold: float = 0.001) -> tuple[np.ndarray, float, int]:
    """Self-normalized weights, effective sample size 1/sum(w^2), and the
    count of weights above the depletion threshold."""
    log_w_star = np.asarray(log_w_star, float)
    if log_w_star.size == 0 or not np.any(np.isfinite(log_w_star)):
        raise TotalDepletionError("all importance weights are zero")
    lse = logsumexp(log_w_star)
    w = np.exp(log_w_star - lse)
    w = w / w.sum()  # kill the last-ulp drift so sums are exact
    ess = 1.0 / float(np.sum(w ** 2))
    n_nonneg = int(np.sum(w > threshold))
    return w, ess, n_nonneg


def posterior_expectation(wd: WeightedDraws,
                          functional: str | Callable[[np.ndarray], float]) -> float:
    """SNIS estimate of a posterior expectation. ``functional`` is a
    parameter name or a callable on the draw's parameter vector."""
    if isinstance(functional, str):
        vals = wd.draws.column(functional)
    else:
        vals = np.array([functional(row) for row in wd.draws.values])
    return float(np.dot(wd.w, vals))


def posterior_mean_vector(wd: WeightedDraws) -> np.ndarray:
    return wd.w @ wd.draws.values


def sir_resample(wd: WeightedDraws, R: int,
                 rng: np.random.Generator) -> DrawSet:
    """Sample R draws with replacement, proportionally to the normalized
    weights; quantiles of the resample estimate corrected posterior
    quantiles."""
    if R < 1:
        raise ValueError("R must be >= 1")
    idx = rng.choice(wd.draws.K, size=R, replace=True, p=wd.w)
    return DrawSet(
        names=list(wd.draws.names),
        values=wd.draws.values[idx],
        logpost=wd.draws.logpost[idx],
        provenance={**wd.draws.provenance, "resampled": R},
    )
