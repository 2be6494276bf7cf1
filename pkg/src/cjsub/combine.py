"""Merging per-subsample corrected posteriors into one estimate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .mcmc import DrawSet

Rule = Literal["equal", "inv_var_weights", "ess"]


@dataclass(frozen=True)
class SubsampleDiagnostics:
    weight_variance: float
    ess: float
    n_nonneg: int = 0


def combination_weights(diagnostics: Sequence[SubsampleDiagnostics],
                        rule: Rule) -> np.ndarray:
    """Normalized weights z_m over subsamples for the chosen rule."""
    M = len(diagnostics)
    if M < 1:
        raise ValueError("need at least one subsample")
    if rule == "equal":
        z = np.ones(M)
    elif rule == "inv_var_weights":
        v = np.array([max(d.weight_variance, 1e-300) for d in diagnostics])
        z = 1.0 / v
    elif rule == "ess":
        z = np.array([d.ess for d in diagnostics], float)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return z / z.sum()


def combine_expectations(estimates: np.ndarray,
                         diagnostics: Sequence[SubsampleDiagnostics],
                         rule: Rule = "equal") -> np.ndarray:
    """Weighted average of per-subsample posterior expectations.

    ``estimates`` is (M, P) or (M,); the result has shape (P,) or scalar.
    """
    estimates = np.asarray(estimates, float)
    z = combination_weights(diagnostics, rule)
    return z @ estimates


def pooled_resample(drawsets: Sequence[DrawSet], z: np.ndarray,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Pool SIR draws across subsamples with inclusion counts proportional
    to z_m. Returns the pooled (n, P) value matrix.

    Quantiles do not average linearly, so pooling the resamples (rather than
    averaging per-subsample quantiles) is used for combined intervals.
    """
    total = sum(ds.K for ds in drawsets)
    parts = []
    for ds, zm in zip(drawsets, z):
        n_m = int(round(zm * total))
        if n_m == 0:
            continue
        if n_m == ds.K:
            parts.append(ds.values)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(ds.K, size=n_m, replace=True)
            parts.append(ds.values[idx])
    return np.concatenate(parts, axis=0)


def summary_table(names: Sequence[str], values: np.ndarray,
                  weights: np.ndarray | None = None) -> list[dict]:
    """Per-parameter mean/sd/quantile rows from (n, P) draws."""
    rows = []
    for j, name in enumerate(names):
        col = values[:, j]
        if weights is None:
            mean = float(col.mean())
            sd = float(col.std(ddof=0))
            q = np.quantile(col, [0.025, 0.5, 0.975])
        else:
            mean = float(np.dot(weights, col))
            sd = float(np.sqrt(np.dot(weights, (col - mean) ** 2)))
            q = _weighted_quantile(col, weights, [0.025, 0.5, 0.975])
        rows.append({"parameter": name, "mean": mean, "sd": sd,
                     "q2.5": float(q[0]), "q50": float(q[1]),
                     "q97.5": float(q[2])})
    return rows


def _weighted_quantile(x: np.ndarray, w: np.ndarray, qs) -> np.ndarray:
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    return np.interp(qs, cw, x[order])


def combined_quantiles(drawsets: Sequence[DrawSet],
                       diagnostics: Sequence[SubsampleDiagnostics],
                       rule: Rule = "equal",
                       rng: np.random.Generator | None = None) -> list[dict]:
    """Combined per-parameter summary from pooled SIR resamples."""
    z = combination_weights(diagnostics, rule)
    pooled = pooled_resample(drawsets, z, rng)
    return summary_table(drawsets[0].names, pooled)


@dataclass(frozen=True)
class DispersionReport:
    """Mean 95% interval endpoints across subsamples, before and after the
    importance correction. Corrected intervals should sit strictly inside
    the subposterior ones on average."""

    parameters: list[str]
    sub_lower: np.ndarray
    sub_upper: np.ndarray
    corrected_lower: np.ndarray
    corrected_upper: np.ndarray

    def mean_widths(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.sub_upper - self.sub_lower,
                self.corrected_upper - self.corrected_lower)


def subsample_report(parameters: Sequence[str],
                     sub_quantiles: np.ndarray,
                     corrected_quantiles: np.ndarray) -> DispersionReport:
    """``sub_quantiles`` and ``corrected_quantiles`` are (M, P, 2) arrays of
    per-subsample (lower, upper) 2.5% quantiles."""
    sub = np.asarray(sub_quantiles, float)
    cor = np.asarray(corrected_quantiles, float)
    return DispersionReport(
        parameters=list(parameters),
        sub_lower=sub[:, :, 0].mean(axis=0),
        sub_upper=sub[:, :, 1].mean(axis=0),
        corrected_lower=cor[:, :, 0].mean(axis=0),
        corrected_upper=cor[:, :, 1].mean(axis=0),
    )
