"""Monte Carlo harness comparing estimators of beta and rho2 across lambda.

Each cell of a scenario grid (family, n, m, rho2) draws ``replicates``
single-stratum datasets with unit weights, fits every lambda and records the
root mean square error of beta_hat and of both rho2 estimators.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import ConfigError, PhidivError
from .estimation import fit
from .inference import rho2_binder, rho2_moments
from .model import SurveyDataset, cluster_probabilities
from .samplers import FAMILIES, canonical_family, sample_clusters

DEFAULT_LAMBDAS = (0.0, 2.0 / 3.0, 1.0, 1.5, 2.0, 2.5)
DEFAULT_BETA = (-0.3, -0.1, 0.1, 0.2, 0.2, -0.2, -0.2, 0.1, -0.1, 0.3, -0.3, 0.1)
DEFAULT_MEAN = (1.0, -2.0, 1.0, 5.0)
DEFAULT_VAR = (0.0, 25.0, 25.0, 25.0)
COLUMNS = ("family", "n", "m", "rho2", "lambda", "rmse_beta", "rmse_rho2_binder",
           "rmse_rho2_moments", "replicates", "failures")
THREADS_ENV = "PHIDIV_THREADS"


@dataclass(frozen=True)
class ScenarioConfig:
    """Grid and model settings for one simulation run.

    ``true_beta`` holds the d*k free coefficients (baseline block excluded);
    the covariate law is N(covariate_mean, diag(covariate_var)).
    """

    families: tuple
    n_clusters: tuple
    m: tuple
    rho2: tuple
    lambdas: tuple = DEFAULT_LAMBDAS
    replicates: int = 500
    seed: int = 0
    true_beta: tuple = DEFAULT_BETA
    covariate_mean: tuple = DEFAULT_MEAN
    covariate_var: tuple = DEFAULT_VAR
    name: str = field(default="scenario", compare=False)

    def __post_init__(self):
        fams = tuple(canonical_family(f) for f in _as_tuple(self.families))
        object.__setattr__(self, "families", fams)
        for key in ("families", "n_clusters", "m", "rho2", "lambdas"):
            if len(getattr(self, key)) == 0:
                raise ConfigError(f"{key}: grid must not be empty")
        if int(self.replicates) < 1:
            raise ConfigError(f"replicates: must be >= 1, got {self.replicates}")
        if any(int(n) < 1 for n in self.n_clusters):
            raise ConfigError("n_clusters: values must be positive integers")
        if any(int(m) < 2 for m in self.m):
            raise ConfigError("m: cluster sizes must be >= 2")
        if any(not 0.0 <= r < 1.0 for r in self.rho2):
            raise ConfigError("rho2: values must lie in [0, 1)")
        if any(lam < -1 for lam in self.lambdas):
            raise ConfigError("lambdas: values must be >= -1")
        k = len(self.covariate_mean)
        if len(self.covariate_var) != k or k == 0:
            raise ConfigError("covariate_mean and covariate_var must have equal, positive length")
        if any(v < 0 for v in self.covariate_var):
            raise ConfigError("covariate_var: variances must be non-negative")
        if len(self.true_beta) % k != 0:
            raise ConfigError(f"true_beta: length {len(self.true_beta)} is not a multiple of k={k}")
        if int(self.seed) < 0 or int(self.seed) >= 2 ** 64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")

    @property
    def k(self):
        return len(self.covariate_mean)

    @property
    def d(self):
        return len(self.true_beta) // self.k

    def cells(self):
        """Grid cells (family, n, m, rho2) in output order."""
        return list(product(self.families, self.n_clusters, self.m, self.rho2))

    def with_overrides(self, **kwargs):
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(kwargs)
        return ScenarioConfig(**values)


def _as_tuple(value):
    if isinstance(value, str):
        return (value,)
    return tuple(value)


# ---------------------------------------------------------------- config I/O

def parse_number(text):
    """Float from a decimal or a fraction such as ``2/3``."""
    return float(Fraction(text.strip()))


_PARSERS = {
    "family": ("families", lambda v: tuple(s.strip() for s in v.split(","))),
    "families": ("families", lambda v: tuple(s.strip() for s in v.split(","))),
    "n_clusters": ("n_clusters", lambda v: tuple(int(s) for s in v.split(","))),
    "n": ("n_clusters", lambda v: tuple(int(s) for s in v.split(","))),
    "m": ("m", lambda v: tuple(int(s) for s in v.split(","))),
    "rho2": ("rho2", lambda v: tuple(parse_number(s) for s in v.split(","))),
    "lambdas": ("lambdas", lambda v: tuple(parse_number(s) for s in v.split(","))),
    "replicates": ("replicates", int),
    "seed": ("seed", int),
    "true_beta": ("true_beta", lambda v: tuple(parse_number(s) for s in v.split(","))),
    "covariate_mean": ("covariate_mean", lambda v: tuple(parse_number(s) for s in v.split(","))),
    "covariate_var": ("covariate_var", lambda v: tuple(parse_number(s) for s in v.split(","))),
    "name": ("name", str.strip),
}
_REQUIRED = ("families", "n_clusters", "m", "rho2")


def parse_config(text, name="scenario"):
    """Read a ``key = value`` config; ``#`` starts a comment, lists use commas."""
    values = {"name": name}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        target, parse = _PARSERS[key]
        try:
            values[target] = parse(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing field(s): {', '.join(missing)}")
    try:
        return ScenarioConfig(**values)
    except PhidivError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), name=os.path.splitext(os.path.basename(path))[0])


def bundled_config(name):
    """Config shipped with the package, e.g. ``scenario1``."""
    path = os.path.join(os.path.dirname(__file__), "data", f"{name}.cfg")
    if not os.path.exists(path):
        raise ConfigError(f"no bundled config named {name!r}")
    return load_config(path)


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class RmseRecord:
    family: str
    n: int
    m: int
    rho2: float
    lam: float
    rmse_beta: float
    rmse_rho2_binder: float
    rmse_rho2_moments: float
    replicates_used: int
    failures: int


@dataclass(frozen=True)
class ReplicateOutcome:
    """Per-lambda results of one replicate; NaN marks a failed fit."""

    sq_err_beta: np.ndarray
    rho2_binder: np.ndarray
    rho2_moments: np.ndarray


def draw_dataset(config, family, n, m, rho2, rng):
    """One single-stratum dataset from the scenario model."""
    sd = np.sqrt(np.asarray(config.covariate_var, dtype=float))
    X = np.asarray(config.covariate_mean, dtype=float) + sd * rng.standard_normal((n, config.k))
    probs = cluster_probabilities(X, np.asarray(config.true_beta, dtype=float))
    counts = sample_clusters(family, probs, m, rho2, rng)
    return SurveyDataset(np.zeros(n, dtype=int), np.ones(n), np.full(n, m), counts, X)


def replicate_rng(seed, cell_id, replicate_id):
    """Independent generator stream for one replicate of one cell."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(cell_id), int(replicate_id)))
    return np.random.Generator(np.random.PCG64(seq))


def run_replicate(config, cell_id, cell, replicate_id):
    family, n, m, rho2 = cell
    rng = replicate_rng(config.seed, cell_id, replicate_id)
    data = draw_dataset(config, family, n, m, rho2, rng)
    beta0 = np.asarray(config.true_beta, dtype=float)
    L = len(config.lambdas)
    sq = np.full(L, np.nan)
    binder = np.full(L, np.nan)
    moments = np.full(L, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = None
        for j, lam in enumerate(config.lambdas):
            try:
                if base is None:
                    base = fit(data, 0.0)
                res = base if abs(lam) < 1e-12 else fit(data, lam, beta0=base.beta_hat)
                if not res.converged:
                    continue
                b = res.beta_hat
                binder_j = rho2_binder(data, b).rho2_hat
                moments_j = rho2_moments(data, b).rho2_hat
            except PhidivError:
                continue
            sq[j] = float(np.sum((b - beta0) ** 2))
            binder[j] = binder_j
            moments[j] = moments_j
    return ReplicateOutcome(sq, binder, moments)


def _run_cell_chunk(args):
    config, cell_id, cell, reps = args
    # non-convergence is reported through the failure counts instead
    logger = logging.getLogger("phidiv.estimation")
    previous = logger.level
    logger.setLevel(logging.ERROR)
    try:
        return [run_replicate(config, cell_id, cell, r) for r in reps]
    finally:
        logger.setLevel(previous)


def thread_cap(requested=None):
    """Worker count: ``requested`` or the CPU count, capped by PHIDIV_THREADS."""
    workers = requested if requested is not None else (os.cpu_count() or 1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            workers = min(workers, max(1, int(env)))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return max(1, int(workers))


def summarize_cell(config, cell, outcomes):
    """Collapse replicate outcomes of one cell into one record per lambda."""
    family, n, m, rho2 = cell
    sq = np.array([o.sq_err_beta for o in outcomes])
    binder = np.array([o.rho2_binder for o in outcomes])
    moments = np.array([o.rho2_moments for o in outcomes])
    records = []
    for j, lam in enumerate(config.lambdas):
        ok = np.isfinite(sq[:, j])
        used = int(ok.sum())
        if used:
            rb = float(np.sqrt(np.mean(sq[ok, j])))
            r1 = float(np.sqrt(np.mean((binder[ok, j] - rho2) ** 2)))
            r2 = float(np.sqrt(np.mean((moments[ok, j] - rho2) ** 2)))
        else:
            rb = r1 = r2 = float("nan")
        records.append(RmseRecord(family, int(n), int(m), float(rho2), float(lam),
                                  rb, r1, r2, used, len(outcomes) - used))
    return records


def run_scenario(config, workers=None, chunk=25):
    """Run every grid cell and return RmseRecords in grid order.

    Replicates are spread over up to ``workers`` processes (capped by the
    PHIDIV_THREADS environment variable).  Every replicate owns a generator
    derived from (seed, cell id, replicate id), so results do not depend on
    the number of workers.
    """
    cells = config.cells()
    tasks = []
    for cell_id, cell in enumerate(cells):
        for start in range(0, config.replicates, chunk):
            reps = range(start, min(start + chunk, config.replicates))
            tasks.append((config, cell_id, cell, reps))
    workers = thread_cap(workers)
    if workers == 1 or len(tasks) == 1:
        chunks = [_run_cell_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_chunk, tasks))
    per_cell = [[] for _ in cells]
    for (_, cell_id, _, _), outcomes in zip(tasks, chunks):
        per_cell[cell_id].extend(outcomes)
    records = []
    for cell, outcomes in zip(cells, per_cell):
        records.extend(summarize_cell(config, cell, outcomes))
    return records


def _fmt(value):
    return "nan" if not np.isfinite(value) else f"{value:.6g}"


def format_results(records):
    """CSV text with a header row and 6 significant digits."""
    records = list(records)
    if not records:
        raise ConfigError("no records to emit; the scenario grid is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow([r.family, r.n, r.m, _fmt(r.rho2), _fmt(r.lam), _fmt(r.rmse_beta),
                         _fmt(r.rmse_rho2_binder), _fmt(r.rmse_rho2_moments),
                         r.replicates_used, r.failures])
    return buf.getvalue()


def emit_results(records, path):
    """Write the results CSV to ``path``; returns the text written."""
    text = format_results(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


__all__ = [
    "COLUMNS", "DEFAULT_LAMBDAS", "FAMILIES", "ReplicateOutcome", "RmseRecord",
    "ScenarioConfig", "bundled_config", "draw_dataset", "emit_results", "format_results",
    "load_config", "parse_config", "replicate_rng", "run_replicate", "run_scenario",
    "summarize_cell", "thread_cap",
]
