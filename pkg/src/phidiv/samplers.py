"""Random generators for overdispersed multinomial counts.

All three families share the first two moments E[Y] = m pi and
V[Y] = (1 + rho2 (m - 1)) m Delta(pi):

* Dirichlet-multinomial: p ~ Dirichlet(pi (1 - rho2) / rho2), Y ~ Mult(m, p).
* random-clumped: U ~ Cat(pi), N ~ Bin(m, sqrt(rho2)),
  Y = N e_U + Mult(m - N, pi).
* m-inflated: with probability rho2 Y = m e_U, otherwise Y ~ Mult(m, pi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FAMILIES = ("dirichlet_multinomial", "random_clumped", "m_inflated")
ALIASES = {"dm": "dirichlet_multinomial", "rc": "random_clumped", "mi": "m_inflated",
           "m-i": "m_inflated"}


def canonical_family(name):
    key = str(name).strip().lower()
    key = ALIASES.get(key, key)
    if key not in FAMILIES:
        raise DomainError(f"unknown family {name!r}; expected one of {', '.join(FAMILIES)}")
    return key


def _check_probs(probs):
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-10):
        raise DomainError("probability vectors must lie on the simplex")
    return probs / probs.sum(axis=1, keepdims=True)


def _check_rho2(rho2, family):
    rho2 = float(rho2)
    upper_ok = family != "dirichlet_multinomial"
    if not (0.0 <= rho2 < 1.0 or (upper_ok and rho2 == 1.0)):
        raise DomainError(f"rho2 must lie in [0, 1) for {family}, got {rho2}")
    return rho2


@dataclass(frozen=True)
class OverdispersionSpec:
    pi: np.ndarray
    rho2: float
    m: int
    family: str

    def __post_init__(self):
        family = canonical_family(self.family)
        pi = _check_probs(self.pi)[0]
        pi.setflags(write=False)
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"cluster size must be a positive integer, got {self.m}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "rho2", _check_rho2(self.rho2, family))
        object.__setattr__(self, "m", int(self.m))

    @property
    def nu(self):
        """Overdispersion factor 1 + rho2 (m - 1)."""
        return 1.0 + self.rho2 * (self.m - 1)

    def covariance(self):
        delta = np.diag(self.pi) - np.outer(self.pi, self.pi)
        return self.nu * self.m * delta


def _categorical(rng, probs):
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cum[:, -1:]
    return np.minimum((u >= cum).sum(axis=1), probs.shape[1] - 1)


def _one_hot(index, width):
    out = np.zeros((index.size, width), dtype=np.int64)
    out[np.arange(index.size), index] = 1
    return out


def sample_clusters(family, probs, m, rho2, rng):
    """One overdispersed count vector per row of ``probs``.

    Args:
        family: family name (or dm / rc / mi).
        probs: (n, C) matrix of cell probabilities.
        m: common cluster size.
        rho2: intra-cluster correlation.
        rng: numpy Generator.

    Returns:
        (n, C) int64 array, every row summing to m.
    """
    family = canonical_family(family)
    probs = _check_probs(probs)
    rho2 = _check_rho2(rho2, family)
    m = int(m)
    n, width = probs.shape
    if rho2 == 0.0:
        return rng.multinomial(m, probs).astype(np.int64)
    if family == "dirichlet_multinomial":
        conc = (1.0 - rho2) / rho2
        mixed = np.vstack([rng.dirichlet(p * conc) for p in probs])
        # guard against rows that underflowed to zero for tiny concentrations
        bad = ~np.isfinite(mixed).all(axis=1) | (mixed.sum(axis=1) <= 0)
        if np.any(bad):
            mixed[bad] = _one_hot(_categorical(rng, probs[bad]), width)
        mixed /= mixed.sum(axis=1, keepdims=True)
        return rng.multinomial(m, mixed).astype(np.int64)
    if family == "random_clumped":
        clump = _categorical(rng, probs)
        size = rng.binomial(m, np.sqrt(rho2), size=n)
        rest = rng.multinomial(m - size, probs)
        return (rest + size[:, None] * _one_hot(clump, width)).astype(np.int64)
    # m-inflated
    inflated = rng.random(n) < rho2
    out = rng.multinomial(m, probs).astype(np.int64)
    if np.any(inflated):
        clump = _categorical(rng, probs[inflated])
        out[inflated] = m * _one_hot(clump, width)
    return out


def sample(spec, rng_seed, n_draws):
    """``n_draws`` independent count vectors from ``spec``.

    ``rng_seed`` is an integer seed or an existing numpy Generator; equal seeds
    give identical draws.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n_draws = int(n_draws)
    if n_draws < 1:
        raise DomainError("n_draws must be positive")
    probs = np.broadcast_to(spec.pi, (n_draws, spec.pi.size))
    return sample_clusters(spec.family, probs, spec.m, spec.rho2, rng)
