"""Conditional capture-history likelihood and marginal-likelihood tools.

All dataset-level arithmetic is in log space. The never-seen-again
probability is computed by backward recursion in linear space (values stay
in [0,1]) and logged at the end.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from .data import CaptureHistory
from .model import Design, ModelSpec, Theta

# Running count of per-history conditional-likelihood evaluations, for the
# pipeline's performance ledger. Per-process; workers report their own.
_eval_count = 0


def evaluation_count() -> int:
    return _eval_count


def reset_evaluation_count() -> None:
    global _eval_count
    _eval_count = 0


def history_loglik(theta: Theta, design: Design, eps) -> np.ndarray:
    """Log conditional history probabilities, vectorized over rows.

    ``eps`` may be a scalar, a vector of length R (one random effect per
    row), or an (R, N) matrix of per-row particles. The result matches the
    trailing shape: (R,) or (R, N). Values may be -inf for zero-probability
    histories (e.g. a detection gap under p = 1).
    """
    global _eval_count
    R, T = design.x.shape
    eps = np.asarray(eps, float)
    squeeze = eps.ndim < 2
    if eps.ndim == 0:
        eps = np.full(R, float(eps))
    if eps.ndim == 1:
        eps = eps[:, None]
    N = eps.shape[1]
    _eval_count += R * N

    eta = theta.alpha[design.surv_idx]
    if theta.beta.size:
        eta = eta + theta.beta[None, :]
    pcap = theta.p[design.cap_idx]               # (R, T-1)

    with np.errstate(divide="ignore"):
        obs = np.where(design.seen_next, np.log(pcap), np.log1p(-pcap))

    phi = expit(eta[:, :, None] + eps[:, None, :])   # (R, T-1, N)
    with np.errstate(divide="ignore"):
        term = np.log(phi) + obs[:, :, None]
    total = np.where(design.active[:, :, None], term, 0.0).sum(axis=1)

    # Never-seen-again probability, backward from the final occasion; record
    # each row's value at its last detection as we pass it.
    chi = np.ones((R, N))
    log_chi_at_last = np.zeros((R, N))
    for t in range(T - 2, -1, -1):
        chi = 1.0 - phi[:, t, :] * (1.0 - (1.0 - pcap[:, t, None]) * chi)
        at_last = design.l0 == t
        if np.any(at_last):
            with np.errstate(divide="ignore"):
                log_chi_at_last[at_last] = np.log(chi[at_last])
    total += log_chi_at_last
    return total[:, 0] if squeeze else total


def never_seen_again_prob(theta: Theta, spec: ModelSpec,
                          history: CaptureHistory, eps: float, t: int) -> float:
    """Probability an individual alive at occasion t (1-based) is never
    detected afterwards."""
    T = spec.n_occasions
    if not 1 <= t <= T:
        raise ValueError("occasion out of range")
    design = Design.from_histories([history], spec)
    eta = theta.alpha[design.surv_idx][0]
    if theta.beta.size:
        eta = eta + theta.beta
    pcap = theta.p[design.cap_idx][0]
    chi = 1.0
    for s in range(T - 2, t - 2, -1):
        phi_s = float(expit(eta[s] + eps))
        chi = 1.0 - phi_s * (1.0 - (1.0 - pcap[s]) * chi)
    return float(chi)


def cond_loglik(theta: Theta, spec: ModelSpec,
                history: CaptureHistory, eps: float) -> float:
    """Log conditional probability of one capture history given its random
    effect (Cormack-Jolly-Seber, conditioned on first detection)."""
    design = Design.from_histories([history], spec)
    return float(history_loglik(theta, design, float(eps))[0])


def sum_to_one_check(theta: Theta, spec: ModelSpec, first: int, eps: float,
                     cohort_age: int | None = None) -> float:
    """Total probability of every continuation history after first detection
    at ``first``; equals 1 for a correct likelihood. Enumerates all
    2^(T-first) continuations, so T must be small."""
    T = spec.n_occasions
    n_free = T - first
    if n_free > 20:
        raise ValueError("too many occasions to enumerate")
    histories = []
    for bits in range(2 ** n_free):
        occ = [0] * T
        occ[first - 1] = 1
        for j in range(n_free):
            occ[first + j] = (bits >> j) & 1
        histories.append(CaptureHistory(tuple(occ), cohort_age=cohort_age))
    design = Design.from_histories(histories, spec)
    ll = history_loglik(theta, design, float(eps))
    return float(np.exp(ll).sum())


def marg_loglik_quadrature_rows(theta: Theta, design: Design,
                                nodes: int = 64) -> np.ndarray:
    """Per-row Gauss-Hermite approximation of the log marginal history
    likelihood, integrating the Gaussian random effect out."""
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    if theta.sigma_eps == 0.0:
        return history_loglik(theta, design, 0.0)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    eps = np.sqrt(2.0) * theta.sigma_eps * x          # (nodes,)
    eps_mat = np.broadcast_to(eps, (design.n_rows, nodes))
    ll = history_loglik(theta, design, eps_mat)       # (R, nodes)
    return logsumexp(ll + np.log(w)[None, :], axis=1) - 0.5 * np.log(np.pi)


def marg_loglik_quadrature(theta: Theta, spec: ModelSpec,
                           history: CaptureHistory, nodes: int = 64) -> float:
    design = Design.from_histories([history], spec)
    return float(marg_loglik_quadrature_rows(theta, design, nodes)[0])
