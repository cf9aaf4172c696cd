"""Sandwich covariance, design effect and intra-cluster correlation estimators.

All variability quantities are built from the pseudo-likelihood score terms
w_hi (y*_hi - M_hi pi*_hi) kron x_hi, whichever lambda produced beta_hat.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError, SingularityError
from .estimation import MAX_CONDITION, cluster_scores_pml, information_sum, kron_rows
from .model import check_beta, cluster_probabilities


class RangeWarning(UserWarning):
    """An intra-cluster correlation estimate fell outside [0, 1]."""


def information_matrix(data, beta):
    """H_n(beta) = (1/n) sum_hi w_hi M_hi Delta(pi*_hi) kron x_hi x_hi^T."""
    beta = check_beta(beta, data.d, data.k)
    return information_sum(data, beta) / data.n_clusters


def variability_matrix(data, beta_hat, center=True):
    """G_n_hat: second-moment matrix of the per-cluster pseudo-likelihood scores.

    Args:
        data: SurveyDataset.
        beta_hat: estimate at which the scores are evaluated.
        center: subtract the mean score u/n.  At the pseudo-likelihood
            estimate u = 0 and both forms coincide.
    """
    scores = cluster_scores_pml(data, beta_hat)
    if center:
        scores = scores - scores.mean(axis=0)
    return scores.T @ scores / data.n_clusters


def _null_directions(matrix, rel=1.0 / MAX_CONDITION):
    vals, vecs = np.linalg.eigh(matrix)
    small = vals <= rel * max(vals.max(), 0.0)
    return [vecs[:, i] for i in np.flatnonzero(small)]


def _checked_solve(matrix, rhs, what):
    """Solve matrix @ X = rhs for a symmetric PSD ``matrix``.

    Raises SingularityError when the condition number exceeds MAX_CONDITION.
    """
    sym = 0.5 * (matrix + matrix.T)
    cond = np.linalg.cond(sym) if np.all(np.isfinite(sym)) else np.inf
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        nulls = _null_directions(sym)
        raise SingularityError(
            f"{what} is singular (condition {cond:.3g}); "
            f"{len(nulls)} null direction(s)",
            null_directions=nulls,
        )
    try:
        factor = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        return np.linalg.solve(sym, rhs)
    half = np.linalg.solve(factor, rhs)
    return np.linalg.solve(factor.T, half)


@dataclass(frozen=True)
class SandwichComponents:
    H_n: np.ndarray
    G_n_hat: np.ndarray
    covariance: np.ndarray
    design_effect_matrix: np.ndarray
    n_clusters: int

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def sandwich_covariance(data, beta_hat, center=True):
    """H_n^-1 G_n_hat H_n^-1 / n together with its ingredients."""
    beta_hat = check_beta(beta_hat, data.d, data.k)
    H = information_matrix(data, beta_hat)
    G = variability_matrix(data, beta_hat, center=center)
    deff = _checked_solve(H, G, "information matrix H_n")
    cov = _checked_solve(H, deff.T, "information matrix H_n") / data.n_clusters
    cov = 0.5 * (cov + cov.T)
    return SandwichComponents(H, G, cov, deff, data.n_clusters)


def design_effect(data, beta_hat, center=True):
    """nu_hat = trace(H_n^-1 G_n_hat) / (d k)."""
    comp = sandwich_covariance(data, beta_hat, center=center)
    return float(np.trace(comp.design_effect_matrix) / (data.d * data.k))


def stratum_design_effect(data, beta_hat, h, center=True):
    """Design effect computed from stratum ``h`` alone, weights included."""
    return design_effect(data.stratum(h), beta_hat, center=center)


# ---------------------------------------------------------- intra-cluster rho2

@dataclass(frozen=True)
class OverdispersionEstimate:
    stratum: str
    method: str
    nu_hat: float
    rho2_hat: float
    m_h: int
    out_of_range: bool


def common_size(stratum_data):
    """Common observed cluster total of a stratum, or None when they differ."""
    totals = stratum_data.responses
    if not np.all(totals == totals[0]):
        return None
    return int(round(totals[0]))


def eligible_strata(data):
    """Dense indices of strata whose clusters share one observed total."""
    return [h for h in range(data.n_strata) if common_size(data.stratum(h)) is not None]


def _stratum_size(stratum_data):
    m_h = common_size(stratum_data)
    if m_h is None:
        raise InputError(
            f"stratum {stratum_data.stratum_labels[0]} has unequal cluster totals "
            f"{sorted(set(stratum_data.responses.astype(int).tolist()))}; "
            "intra-cluster correlation needs a common size"
        )
    if m_h < 2:
        raise DomainError("intra-cluster correlation needs cluster size >= 2")
    return m_h


def _make_estimate(stratum_data, method, nu, m_h):
    rho2 = (nu - 1.0) / (m_h - 1.0)
    out = not (0.0 <= rho2 <= 1.0)
    if out:
        warnings.warn(
            f"{method} rho2 = {rho2:.4g} outside [0, 1] in stratum "
            f"{stratum_data.stratum_labels[0]}", RangeWarning, stacklevel=3,
        )
    return OverdispersionEstimate(stratum_data.stratum_labels[0], method, float(nu),
                                  float(rho2), m_h, out)


def binder_nu(stratum_data, beta_hat, center=True):
    """Linearization estimate of nu_m for one stratum (weight free).

    (1/dk) trace([sum_i m Delta(pi*_i) kron x_i x_i^T]^-1 sum_i (v_i - c)(v_i - c)^T)
    with v_i = (y*_i - m pi*_i) kron x_i and c the stratum mean of the v_i
    (or 0 when ``center`` is False).
    """
    m_h = _stratum_size(stratum_data)
    beta_hat = check_beta(beta_hat, stratum_data.d, stratum_data.k)
    unit = stratum_data.with_weights(np.ones(stratum_data.n_clusters))
    probs = cluster_probabilities(unit.covariates, beta_hat)
    resid = unit.counts[:, :-1] - unit.responses[:, None] * probs[:, :-1]
    v = kron_rows(resid, unit.covariates)
    if center:
        v = v - v.mean(axis=0)
    A = information_sum(unit, None, probs=probs)
    ratio = _checked_solve(A, v.T @ v, "stratum information matrix")
    return float(np.trace(ratio) / (unit.d * unit.k)), m_h


def moments_nu(stratum_data, beta_hat):
    """Pearson-type estimate (1/(n_h d)) sum_i sum_s (y - m pi)^2 / (m pi)."""
    m_h = _stratum_size(stratum_data)
    beta_hat = check_beta(beta_hat, stratum_data.d, stratum_data.k)
    probs = cluster_probabilities(stratum_data.covariates, beta_hat)
    if np.any(probs <= np.finfo(float).tiny):
        raise SingularityError("a fitted category probability is numerically zero")
    expected = m_h * probs
    pearson = np.sum((stratum_data.counts - expected) ** 2 / expected)
    return float(pearson / (stratum_data.n_clusters * stratum_data.d)), m_h


def rho2_binder(stratum_data, beta_hat, center=True):
    nu, m_h = binder_nu(stratum_data, beta_hat, center=center)
    return _make_estimate(stratum_data, "binder", nu, m_h)


def rho2_moments(stratum_data, beta_hat):
    nu, m_h = moments_nu(stratum_data, beta_hat)
    return _make_estimate(stratum_data, "moments", nu, m_h)
