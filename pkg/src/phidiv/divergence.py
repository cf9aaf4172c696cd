"""Cressie-Read phi functions and the survey-weighted phi-divergence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedLambdaError
from .model import check_beta, cluster_probabilities, empirical_vector, theoretical_vector

# below this |lambda| the analytic x log x - x + 1 limit is used
LAMBDA_ZERO_TOL = 1e-9


def _check_lambda(lam):
    lam = float(lam)
    if abs(lam + 1.0) < LAMBDA_ZERO_TOL:
        return -1.0
    if not np.isfinite(lam) or lam < -1:
        raise UnsupportedLambdaError(f"Cressie-Read index must be >= -1, got {lam}")
    return lam


def _check_log_limit(x):
    if np.any(x == 0):
        raise DomainError("lambda = -1 is undefined at zero counts (log of 0)")


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("phi is defined for x >= 0 only")
    return x


def _xlogx(x):
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


def phi(lam, x):
    """Cressie-Read phi_lambda(x).

    phi(0) takes its limit 1/(lambda+1).  lambda = -1 is the limit member
    x - 1 - log x and only accepts x > 0.
    """
    lam = _check_lambda(lam)
    x = _check_x(x)
    if abs(lam) < LAMBDA_ZERO_TOL:
        return _xlogx(x) - x + 1.0
    if lam == -1.0:
        _check_log_limit(x)
        return x - 1.0 - np.log(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (np.power(x, lam + 1.0) - x - lam * (x - 1.0)) / (lam * (1.0 + lam))
    return np.where(x == 0, 1.0 / (lam + 1.0), val)


def phi_prime(lam, x):
    """First derivative (x^lambda - 1)/lambda, or log x at lambda = 0."""
    lam = _check_lambda(lam)
    x = _check_x(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(lam) < LAMBDA_ZERO_TOL:
            return np.log(x)
        if lam == -1.0:
            return 1.0 - 1.0 / x
        return (np.power(x, lam) - 1.0) / lam


def phi_double_prime(lam, x):
    """Second derivative x^(lambda-1); equals 1 at x = 1 for every lambda."""
    lam = _check_lambda(lam)
    x = _check_x(x)
    with np.errstate(divide="ignore", over="ignore"):
        return np.power(x, lam - 1.0)


def phi_f(lam, x):
    """x phi'(x) - phi(x), the per-cell weight appearing in the score.

    At x = 0 the product x phi'(x) vanishes for lambda > -1, leaving -phi(0).
    """
    lam = _check_lambda(lam)
    x = _check_x(x)
    if abs(lam) < LAMBDA_ZERO_TOL:
        return x - 1.0
    if lam == -1.0:
        _check_log_limit(x)
        return np.log(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (np.power(x, lam + 1.0) - 1.0) / (lam + 1.0)
    return np.where(x == 0, -1.0 / (lam + 1.0), val)


@dataclass(frozen=True)
class PhiFamilyMember:
    """A member of the Cressie-Read family, usable wherever a phi is needed."""

    lam: float

    def __post_init__(self):
        object.__setattr__(self, "lam", _check_lambda(self.lam))

    def __call__(self, x):
        return phi(self.lam, x)

    def prime(self, x):
        return phi_prime(self.lam, x)

    def double_prime(self, x):
        return phi_double_prime(self.lam, x)

    def f(self, x):
        return phi_f(self.lam, x)

    @property
    def curvature_at_one(self):
        """phi''(1), which is 1 for every Cressie-Read member."""
        return float(self.double_prime(1.0))


def as_phi(phi_or_lambda):
    if isinstance(phi_or_lambda, PhiFamilyMember):
        return phi_or_lambda
    return PhiFamilyMember(phi_or_lambda)


def cluster_divergences(data, beta, lam, probs=None):
    """Per-cluster d_phi(y_hi/m_hi, pi_hi(beta)) as an (n,) array."""
    fam = as_phi(lam)
    if probs is None:
        probs = cluster_probabilities(data.covariates, check_beta(beta, data.d, data.k))
    ratio = data.counts / (data.sizes[:, None] * probs)
    return np.sum(probs * fam(ratio), axis=1)


def divergence(data, beta, lam, probs=None):
    """Survey-weighted phi-divergence between the empirical and model vectors.

    Computed as sum over clusters of (w_hi m_hi / tau) * d_phi(y_hi/m_hi, pi_hi).
    Zero counts contribute pi * phi(0) = pi / (lambda+1).
    """
    per = cluster_divergences(data, beta, lam, probs)
    return float(np.sum(data.weights * data.sizes * per) / data.tau)


def divergence_stacked(data, beta, lam):
    """Same value as :func:`divergence`, evaluated on the stacked vectors.

    sum_j pi_j * phi(p_j / pi_j) over the concatenated (d+1)*n cells.  Kept
    as an independent route for cross-checking.
    """
    p_hat = empirical_vector(data)
    pi = theoretical_vector(data, beta)
    return float(np.sum(pi * as_phi(lam)(p_hat / pi)))
