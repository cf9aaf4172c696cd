"""Score functions and the pseudo minimum phi-divergence fit."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .divergence import LAMBDA_ZERO_TOL, as_phi, divergence
from .errors import DomainError, SeparationError
from .model import category_presence, check_beta, cluster_probabilities

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP = 1e-12
MAX_CONDITION = 1e12
# relative floating-point resolution of the divergence value
RESOLUTION = 1e-13


def kron_rows(left, right):
    """Row-wise Kronecker product: row i is kron(left[i], right[i])."""
    return (left[:, :, None] * right[:, None, :]).reshape(left.shape[0], -1)


def _reduced_delta_times(probs, vec):
    """(I_d, 0) (diag(pi) - pi pi^T) vec for every cluster row."""
    full = probs * vec - probs * np.sum(probs * vec, axis=1, keepdims=True)
    return full[:, :-1]


# ------------------------------------------------------------------ scores

def cluster_scores_general(data, beta, lam):
    """Per-cluster phi-divergence score terms u_phi,hi as an (n, d*k) array.

    u_phi,hi = (w m / phi''(1)) [(I_d, 0) Delta(pi_hi) f_phi,hi] kron x_hi with
    f = x phi'(x) - phi(x) evaluated at y/(m pi).
    """
    fam = as_phi(lam)
    beta = check_beta(beta, data.d, data.k)
    probs = cluster_probabilities(data.covariates, beta)
    ratio = data.counts / (data.sizes[:, None] * probs)
    core = _reduced_delta_times(probs, fam.f(ratio))
    scale = data.weights * data.sizes / fam.curvature_at_one
    return kron_rows(scale[:, None] * core, data.covariates)


def score_general(data, beta, lam):
    """u_phi(beta) = -(tau / phi''(1)) * gradient of the divergence."""
    return cluster_scores_general(data, beta, lam).sum(axis=0)


def cluster_scores_cressie_read(data, beta, lam):
    """Closed-form Cressie-Read score terms, (n, d*k).

    For lambda > -1 this is
    w / ((lambda+1) m^lambda) * [y*^(lambda+1) pi*^(-lambda)
    - (sum_s y_s^(lambda+1) pi_s^(-lambda)) pi*] kron x, written with powers
    of y rather than of y/pi so zero counts stay finite for negative lambda.
    lambda = -1 uses the logarithmic limit and requires positive counts.
    """
    lam = float(lam)
    beta = check_beta(beta, data.d, data.k)
    probs = cluster_probabilities(data.covariates, beta)
    y, m, w = data.counts, data.sizes, data.weights
    if abs(lam + 1.0) < LAMBDA_ZERO_TOL:
        if np.any(y == 0):
            raise DomainError("lambda = -1 score needs strictly positive counts")
        g = np.log(y / (m[:, None] * probs))
        core = (w * m)[:, None] * _reduced_delta_times(probs, g)
        return kron_rows(core, data.covariates)
    if lam < -1:
        raise DomainError(f"lambda must be >= -1, got {lam}")
    if abs(lam) < LAMBDA_ZERO_TOL:
        powered = y
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            powered = np.where(y > 0, np.power(y, lam + 1.0) * np.power(probs, -lam), 0.0)
    total = powered.sum(axis=1, keepdims=True)
    core = powered[:, :-1] - total * probs[:, :-1]
    scale = w / ((lam + 1.0) * np.power(m, lam))
    return kron_rows(scale[:, None] * core, data.covariates)


def score_cressie_read(data, beta, lam):
    return cluster_scores_cressie_read(data, beta, lam).sum(axis=0)


def cluster_scores_pml(data, beta):
    """Pseudo-likelihood score terms w_hi (y*_hi - M_hi pi*_hi) kron x_hi.

    M_hi is the observed total of the cluster, so the terms are exactly the
    gradient contributions of the weighted log-likelihood.
    """
    beta = check_beta(beta, data.d, data.k)
    probs = cluster_probabilities(data.covariates, beta)
    resid = data.counts[:, :-1] - data.responses[:, None] * probs[:, :-1]
    return kron_rows(data.weights[:, None] * resid, data.covariates)


def pseudo_log_likelihood(data, beta):
    """sum_hi w_hi y_hi^T log pi_hi(beta)."""
    beta = check_beta(beta, data.d, data.k)
    probs = cluster_probabilities(data.covariates, beta)
    logp = np.log(probs)
    return float(np.sum(data.weights[:, None] * np.where(data.counts > 0, data.counts * logp, 0.0)))


def information_sum(data, beta, probs=None):
    """sum_hi w_hi M_hi Delta(pi*_hi) kron x_hi x_hi^T (not divided by n)."""
    if probs is None:
        probs = cluster_probabilities(data.covariates, check_beta(beta, data.d, data.k))
    ps = probs[:, :-1]
    delta = ps[:, :, None] * np.eye(data.d)[None] - ps[:, :, None] * ps[:, None, :]
    xx = data.covariates[:, :, None] * data.covariates[:, None, :]
    scale = data.weights * data.responses
    dk = data.d * data.k
    blocks = (scale[:, None, None, None, None]
              * delta[:, :, None, :, None] * xx[:, None, :, None, :])
    return blocks.reshape(data.n_clusters, dk, dk).sum(axis=0)


def divergence_hessian_sum(data, beta, lam, probs=None):
    """tau times the Hessian of the divergence in beta, (d*k, d*k).

    With x = y/(m pi) and f = x phi' - phi, each cluster contributes
    w m [J^T diag(x^2 phi''(x) / pi) J - sum_s f_s d2 pi_s] kron x x^T where
    J = Delta(pi) is the softmax Jacobian.  At a perfect fit this reduces to
    :func:`information_sum` (up to observed versus design totals).
    """
    fam = as_phi(lam)
    if probs is None:
        probs = cluster_probabilities(data.covariates, check_beta(beta, data.d, data.k))
    m = data.sizes[:, None]
    ratio = data.counts / (m * probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        curv = np.where(data.counts > 0, ratio * ratio * fam.double_prime(ratio), 0.0)
    f = fam.f(ratio)
    n, width = probs.shape
    eye = np.eye(width)
    delta = probs[:, :, None] * eye[None] - probs[:, :, None] * probs[:, None, :]
    first = np.einsum("nsa,ns,nsb->nab", delta, curv / probs, delta)
    # sum_s c_s d2 pi_s = sum_s c_s pi_s (e_s - pi)(e_s - pi)^T - (c . pi) Delta
    c = -f
    centred = eye[None] - probs[:, None, :]
    second = (np.einsum("ns,nsa,nsb->nab", c * probs, centred, centred)
              - np.sum(c * probs, axis=1)[:, None, None] * delta)
    core = (first + second)[:, :-1, :-1] * (data.weights * data.sizes)[:, None, None]
    xx = data.covariates[:, :, None] * data.covariates[:, None, :]
    dk = data.d * data.k
    blocks = core[:, :, None, :, None] * xx[:, None, :, None, :]
    return blocks.reshape(n, dk, dk).sum(axis=0) / fam.curvature_at_one


# --------------------------------------------------------------------- fit

@dataclass
class TraceEntry:
    divergence: float
    step_norm: float
    step: str


@dataclass
class FitResult:
    beta_hat: np.ndarray
    lam: float
    divergence_value: float
    score_inf_norm: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    message: str = ""

    def coefficient_matrix(self, d, k):
        """beta_hat as a (d, k) array, row r holding beta_r."""
        return self.beta_hat.reshape(d, k)


def check_separation(data):
    present = category_presence(data)
    if not np.all(present):
        missing = [int(s) + 1 for s in np.flatnonzero(~present)]
        raise SeparationError(
            f"category {', '.join(map(str, missing))} is never observed; "
            "the divergence has no interior minimiser",
            categories=missing,
        )


def fit(data, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, beta0=None):
    """Pseudo minimum Cressie-Read divergence estimate.

    Damped Newton iterations with Armijo backtracking on the divergence.  The
    exact Hessian is used while it is positive definite and well conditioned;
    otherwise an eigenvalue-modified Hessian keeps the step a descent
    direction.

    Args:
        data: SurveyDataset.
        lam: Cressie-Read index (>= -1; -1 needs strictly positive counts).
        tol: convergence threshold on the sup-norm of the score.
        max_iter: iteration cap.
        beta0: optional start; defaults to 0 for lambda = 0 and to the
            lambda = 0 solution otherwise.

    Returns:
        FitResult.  ``converged`` is False when the cap is hit or the line
        search stalls before the score is small enough.
    """
    check_separation(data)
    fam = as_phi(lam)
    lam = fam.lam
    if lam == -1.0 and np.any(data.counts == 0):
        raise DomainError("fitting with lambda = -1 needs strictly positive counts")
    if beta0 is None:
        if abs(lam) < LAMBDA_ZERO_TOL:
            beta = np.zeros(data.d * data.k)
        else:
            start = fit(data, 0.0, tol=tol, max_iter=max_iter)
            beta = start.beta_hat.copy()
    else:
        beta = check_beta(beta0, data.d, data.k).copy()

    probs = cluster_probabilities(data.covariates, beta)
    value = divergence(data, beta, fam, probs=probs)
    score = score_general(data, beta, fam)
    trace = []
    converged = False
    message = "iteration limit reached"
    iterations = 0
    while True:
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            converged = True
            message = "score below tolerance"
            break
        if iterations >= max_iter:
            break
        direction, kind = _search_direction(data, fam, probs, score)
        step = _line_search(data, fam, beta, value, score, direction)
        if step is None:
            message = "line search failed to decrease the divergence"
            trace.append(TraceEntry(value, 0.0, kind + "-stalled"))
            break
        t, beta, probs, value, score, how = step
        iterations += 1
        trace.append(TraceEntry(value, float(t * np.linalg.norm(direction)), kind + how))
    if not converged:
        log.warning("fit(lambda=%g) did not converge: %s (|u|=%.3g)", lam, message, score_norm)
    return FitResult(
        beta_hat=beta,
        lam=lam,
        divergence_value=value,
        score_inf_norm=score_norm,
        iterations=iterations,
        converged=converged,
        trace=trace,
        message=message,
    )


def _search_direction(data, fam, probs, score):
    """Newton direction, modified so that it is always a descent direction.

    The exact Hessian is used when it is positive definite and well
    conditioned.  Otherwise its eigenvalues are replaced by their absolute
    values, floored at max|eigenvalue| / MAX_CONDITION.  A scaled gradient step
    is the last resort when the Hessian cannot be evaluated.
    """
    with np.errstate(all="ignore"):
        hess = divergence_hessian_sum(data, None, fam, probs=probs)
    if np.all(np.isfinite(hess)):
        try:
            factor = np.linalg.cholesky(hess)
            diag = np.diag(factor)
            if (diag.max() / diag.min()) ** 2 <= MAX_CONDITION:
                return np.linalg.solve(factor.T, np.linalg.solve(factor, score)), "newton"
        except np.linalg.LinAlgError:
            pass
        vals, vecs = np.linalg.eigh(0.5 * (hess + hess.T))
        top = np.max(np.abs(vals))
        if top > 0:
            vals = np.maximum(np.abs(vals), top / MAX_CONDITION)
            return vecs @ ((vecs.T @ score) / vals), "modified"
    info = information_sum(data, None, probs=probs)
    scale = np.trace(info) / info.shape[0]
    return score / (scale if scale > 0 else 1.0), "gradient"


def _safe_divergence(data, beta, fam, probs):
    """Divergence value, or inf where probabilities underflow to zero."""
    if np.any(probs <= 0) or not np.all(np.isfinite(probs)):
        return np.inf
    with np.errstate(all="ignore"):
        try:
            return divergence(data, beta, fam, probs=probs)
        except DomainError:
            return np.inf


def _line_search(data, fam, beta, value, score, direction):
    """Backtrack along ``direction``; return None when no step is accepted.

    Steps are normally accepted by the Armijo rule on the divergence.  Once the
    predicted decrease falls below the floating-point resolution of the
    divergence the rule cannot discriminate, and a step is accepted when it
    lowers the sup-norm of the score instead.
    """
    # gradient of the divergence is -(phi''(1) / tau) * score
    slope = -(fam.curvature_at_one / data.tau) * float(score @ direction)
    by_score = -slope <= RESOLUTION * max(abs(value), np.finfo(float).tiny)
    score_norm = np.max(np.abs(score))
    t = 1.0
    while t >= MIN_STEP:
        trial = beta + t * direction
        probs = cluster_probabilities(data.covariates, trial)
        trial_value = _safe_divergence(data, trial, fam, probs)
        if np.isfinite(trial_value):
            if by_score:
                trial_score = score_general(data, trial, fam)
                if np.max(np.abs(trial_score)) < score_norm:
                    return t, trial, probs, trial_value, trial_score, "-score"
            elif trial_value <= value + ARMIJO_C * t * slope:
                return t, trial, probs, trial_value, score_general(data, trial, fam), ""
        t *= BACKTRACK
    return None


def fit_path(data, lambdas, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Fit several lambdas, warm-starting each non-zero one from lambda = 0."""
    base = fit(data, 0.0, tol=tol, max_iter=max_iter)
    results = []
    for lam in lambdas:
        if abs(float(lam)) < LAMBDA_ZERO_TOL:
            results.append(base)
        else:
            results.append(fit(data, lam, tol=tol, max_iter=max_iter, beta0=base.beta_hat))
    return results
