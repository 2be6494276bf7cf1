"""Model declaration: survival/capture structure, priors, and parameter points.

Two survival structures are supported:

* ``constant``     logit(phi_it) = alpha + eps_i
* ``age_time``     logit(phi_it) = alpha[a(i,t)] + beta_t + eps_i, with the
  first age-class effect pinned at 0 for identifiability and a hierarchical
  prior on the time effects.

Capture probability is either a single constant or age-class specific.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .data import CaptureHistory, CompressedDataset


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    scale: float
    #: When True the second argument is a variance (BUGS convention varies;
    #: variance is the vaguer reading). Configurable per prior.
    scale_is_variance: bool = True

    @property
    def variance(self) -> float:
        return self.scale if self.scale_is_variance else self.scale ** 2

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class UniformPrior:
    low: float
    high: float

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError("uniform prior needs low < high")


@dataclass(frozen=True)
class FixedValue:
    """Degenerate prior: the parameter is held at a known value."""

    value: float


@dataclass(frozen=True)
class ModelSpec:
    survival_structure: Literal["constant", "age_time"]
    capture_structure: Literal["constant", "age"]
    n_occasions: int
    random_effect: bool = True
    # Minimum ages of the survival / capture age classes; the last class is
    # open-ended ("4+"-style clamping).
    survival_age_bounds: tuple[int, ...] = (1, 2, 3, 4)
    capture_age_bounds: tuple[int, ...] = (2, 3, 4, 5)
    alpha_prior: NormalPrior = NormalPrior(0.0, 10.0)
    p_prior: UniformPrior = UniformPrior(0.0, 1.0)
    sigma_eps_prior: UniformPrior | FixedValue = UniformPrior(0.0, 10.0)
    mu_beta_prior: NormalPrior = NormalPrior(0.0, 10.0)
    sigma_beta_prior: UniformPrior = UniformPrior(0.0, 10.0)

    def __post_init__(self) -> None:
        if self.n_occasions < 2:
            raise ValueError("need at least 2 occasions")
        for bounds in (self.survival_age_bounds, self.capture_age_bounds):
            if any(b >= c for b, c in zip(bounds, bounds[1:])):
                raise ValueError("age bounds must be strictly increasing")

    @property
    def n_alpha(self) -> int:
        return 1 if self.survival_structure == "constant" else len(self.survival_age_bounds)

    @property
    def n_beta(self) -> int:
        return 0 if self.survival_structure == "constant" else self.n_occasions - 1

    @property
    def n_p(self) -> int:
        return 1 if self.capture_structure == "constant" else len(self.capture_age_bounds)

    @property
    def hierarchical(self) -> bool:
        return self.survival_structure == "age_time"

    @property
    def needs_cohort_age(self) -> bool:
        return self.survival_structure == "age_time" or self.capture_structure == "age"

    def sigma_eps_fixed(self) -> float | None:
        if not self.random_effect:
            return 0.0
        if isinstance(self.sigma_eps_prior, FixedValue):
            return self.sigma_eps_prior.value
        return None

    @classmethod
    def constant(cls, n_occasions: int, *,
                 sigma_eps_prior: UniformPrior | FixedValue | None = None,
                 random_effect: bool = True,
                 alpha_prior: NormalPrior | None = None,
                 p_prior: UniformPrior | None = None) -> "ModelSpec":
        """Constant-survival, constant-capture model with the study defaults:
        p ~ U(0,1), alpha ~ N(0,10), sigma_eps ~ U(0,10)."""
        return cls(
            survival_structure="constant",
            capture_structure="constant",
            n_occasions=n_occasions,
            random_effect=random_effect,
            alpha_prior=alpha_prior or NormalPrior(0.0, 10.0),
            p_prior=p_prior or UniformPrior(0.0, 1.0),
            sigma_eps_prior=sigma_eps_prior or UniformPrior(0.0, 10.0),
        )

    @classmethod
    def age_time(cls, n_occasions: int) -> "ModelSpec":
        """Age + time survival model with age-dependent capture and the
        case-study priors: alpha_1 = 0, alpha_a ~ N(0,4), beta_t ~ N(mu, sig),
        mu ~ N(0,10), sig ~ U(0,10), p_a ~ U(0,1), sigma_eps ~ U(0,2)."""
        return cls(
            survival_structure="age_time",
            capture_structure="age",
            n_occasions=n_occasions,
            random_effect=True,
            alpha_prior=NormalPrior(0.0, 4.0),
            p_prior=UniformPrior(0.0, 1.0),
            sigma_eps_prior=UniformPrior(0.0, 2.0),
            mu_beta_prior=NormalPrior(0.0, 10.0),
            sigma_beta_prior=UniformPrior(0.0, 10.0),
        )


@dataclass(frozen=True)
class Theta:
    """One joint parameter point on the model's natural scale."""

    alpha: np.ndarray
    p: np.ndarray
    sigma_eps: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_beta: float | None = None
    sigma_beta: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, float)))
        object.__setattr__(self, "beta", np.asarray(self.beta, float))
        # Boundary p values (0 or 1) are tolerated for degenerate test cases;
        # the sampler itself never produces them.
        if np.any((self.p < 0) | (self.p > 1)):
            raise ValueError("capture probabilities must lie in [0,1]")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be >= 0")
        if self.sigma_beta is not None and self.sigma_beta < 0:
            raise ValueError("sigma_beta must be >= 0")

    def validate(self, spec: ModelSpec) -> None:
        if len(self.alpha) != spec.n_alpha:
            raise ValueError("alpha length mismatch")
        if len(self.beta) != spec.n_beta:
            raise ValueError("beta length mismatch")
        if len(self.p) != spec.n_p:
            raise ValueError("p length mismatch")
        if spec.survival_structure == "age_time" and self.alpha[0] != 0.0:
            raise ValueError("first age-class survival effect must be 0")


def param_names(spec: ModelSpec) -> list[str]:
    """Named free parameters in canonical order (the age model's alpha[0] is
    pinned at zero and excluded)."""
    names: list[str] = []
    if spec.survival_structure == "constant":
        names.append("alpha")
    else:
        names += [f"alpha_{a}" for a in spec.survival_age_bounds[1:]]
        names += [f"beta_{t}" for t in range(1, spec.n_occasions)]
    if spec.capture_structure == "constant":
        names.append("p")
    else:
        names += [f"p_{a}" for a in spec.capture_age_bounds]
    names.append("sigma_eps")
    if spec.hierarchical:
        names += ["mu_beta", "sigma_beta"]
    return names


def theta_to_vector(theta: Theta, spec: ModelSpec) -> np.ndarray:
    parts = [theta.alpha if spec.survival_structure == "constant" else theta.alpha[1:]]
    if spec.n_beta:
        parts.append(theta.beta)
    parts.append(theta.p)
    parts.append(np.array([theta.sigma_eps]))
    if spec.hierarchical:
        parts.append(np.array([theta.mu_beta, theta.sigma_beta]))
    return np.concatenate(parts)


def theta_from_vector(vec: np.ndarray, spec: ModelSpec) -> Theta:
    vec = np.asarray(vec, float)
    i = 0
    if spec.survival_structure == "constant":
        alpha = vec[i:i + 1]
        i += 1
    else:
        alpha = np.concatenate([[0.0], vec[i:i + spec.n_alpha - 1]])
        i += spec.n_alpha - 1
    beta = vec[i:i + spec.n_beta]
    i += spec.n_beta
    p = vec[i:i + spec.n_p]
    i += spec.n_p
    sigma_eps = float(vec[i])
    i += 1
    mu_beta = sigma_beta = None
    if spec.hierarchical:
        mu_beta, sigma_beta = float(vec[i]), float(vec[i + 1])
        i += 2
    return Theta(alpha=alpha, p=p, sigma_eps=sigma_eps, beta=beta,
                 mu_beta=mu_beta, sigma_beta=sigma_beta)


def _age_class_idx(age: np.ndarray, bounds: tuple[int, ...]) -> np.ndarray:
    """Index of the age class containing each age, clamping into the first
    and open-ended last class."""
    idx = np.searchsorted(np.asarray(bounds), age, side="right") - 1
    return np.clip(idx, 0, len(bounds) - 1)


@dataclass(frozen=True)
class Design:
    """Vectorized per-entry resolution tables for likelihood evaluation.

    Row r covers intervals t -> t+1 for t = 0..T-2 (0-based). ``surv_idx``
    maps (row, interval) to the survival fixed-effect index; ``cap_idx`` maps
    (row, interval) to the capture-probability index for detection at
    occasion t+1.
    """

    x: np.ndarray            # (R, T) uint8
    f0: np.ndarray           # (R,) 0-based first detection
    l0: np.ndarray           # (R,) 0-based last detection
    mult: np.ndarray         # (R,) multiplicities (exponents)
    surv_idx: np.ndarray     # (R, T-1) int
    cap_idx: np.ndarray      # (R, T-1) int
    T: int
    active: np.ndarray = None    # (R, T-1) bool, f0 <= t < l0
    seen_next: np.ndarray = None  # (R, T-1) bool, detected at occasion t+1

    def __post_init__(self) -> None:
        if self.active is None:
            ts = np.arange(self.T - 1)
            object.__setattr__(
                self, "active",
                (ts[None, :] >= self.f0[:, None]) & (ts[None, :] < self.l0[:, None]))
        if self.seen_next is None:
            object.__setattr__(self, "seen_next", self.x[:, 1:] == 1)

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_histories(cls, histories: list[CaptureHistory], spec: ModelSpec,
                       mult: np.ndarray | None = None) -> "Design":
        T = spec.n_occasions
        R = len(histories)
        if any(h.T != T for h in histories):
            raise ValueError("history length does not match spec.n_occasions")
        x = np.array([h.occasions for h in histories], dtype=np.uint8).reshape(R, T)
        f0 = np.array([h.first - 1 for h in histories])
        l0 = np.array([h.last - 1 for h in histories])
        if mult is None:
            mult = np.ones(R, dtype=np.int64)
        ts = np.arange(T - 1)
        if spec.needs_cohort_age:
            if any(h.cohort_age is None for h in histories):
                raise ValueError("model requires cohort_age on every history")
            a0 = np.array([h.cohort_age for h in histories])
            # Age at interval start t and at the detection occasion t+1.
            age_at_t = a0[:, None] + (ts[None, :] - f0[:, None])
            if spec.survival_structure == "age_time":
                surv_idx = _age_class_idx(age_at_t, spec.survival_age_bounds)
            else:
                surv_idx = np.zeros((R, T - 1), dtype=np.int64)
            if spec.capture_structure == "age":
                cap_idx = _age_class_idx(age_at_t + 1, spec.capture_age_bounds)
            else:
                cap_idx = np.zeros((R, T - 1), dtype=np.int64)
        else:
            surv_idx = np.zeros((R, T - 1), dtype=np.int64)
            cap_idx = np.zeros((R, T - 1), dtype=np.int64)
        return cls(x=x, f0=f0, l0=l0, mult=np.asarray(mult, np.int64),
                   surv_idx=surv_idx, cap_idx=cap_idx, T=T)

    @classmethod
    def from_dataset(cls, data: CompressedDataset, spec: ModelSpec,
                     expand: bool = False) -> "Design":
        if expand:
            hist = data.expand()
            return cls.from_histories(hist, spec)
        hist = [h for h, _ in data.entries]
        mult = np.array([n for _, n in data.entries], dtype=np.int64)
        return cls.from_histories(hist, spec, mult=mult)
