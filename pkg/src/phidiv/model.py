"""Survey design data model and the multinomial logit link.

A survey dataset is a list of clusters grouped by stratum.  Every cluster
carries a sampling weight, a design size ``m``, a vector of category counts and
a covariate vector shared by all of its units.  The last category is the
reference category whose coefficient block is fixed at zero.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ClusterRecord:
    """One sampled cluster.

    ``size`` is the design cluster size m_hi.  The counts normally add up to
    ``size``; a smaller total is accepted and read as item nonresponse (units
    that were planned but gave no answer).
    """

    stratum: int
    cluster: int
    weight: float
    size: int
    counts: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        covariates = np.asarray(self.covariates, dtype=float)
        if counts.ndim != 1 or counts.size < 2:
            raise InputError("counts must be a vector with at least two categories")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise InputError("counts must be non-negative integers")
        if not np.isfinite(self.weight) or self.weight <= 0:
            raise InputError(f"weight must be positive, got {self.weight}")
        if int(self.size) != self.size or self.size < 1:
            raise InputError(f"cluster size must be a positive integer, got {self.size}")
        total = counts.sum()
        if total < 1 or total > self.size:
            raise InputError(
                f"counts add up to {total:g}, expected between 1 and the cluster size {self.size}"
            )
        if covariates.ndim != 1 or not np.all(np.isfinite(covariates)):
            raise InputError("covariates must be a finite vector")
        counts.setflags(write=False)
        covariates.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "covariates", covariates)

    @property
    def responses(self):
        """Number of units that answered (sum of the counts)."""
        return float(self.counts.sum())


class SurveyDataset:
    """Immutable, array-backed collection of clusters.

    Attributes:
        strata: (n,) dense stratum index of every cluster, 0-based.
        weights: (n,) sampling weights w_hi.
        sizes: (n,) design cluster sizes m_hi.
        counts: (n, d+1) category counts.
        covariates: (n, k) covariate matrix.
        stratum_labels, cluster_labels: original identifiers, for reporting.
    """

    def __init__(self, strata, weights, sizes, counts, covariates,
                 stratum_labels=None, cluster_labels=None):
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        n = counts.shape[0]
        strata_raw = np.asarray(strata).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        sizes = np.asarray(sizes, dtype=float).reshape(-1)
        if n < 1:
            raise InputError("a dataset needs at least one cluster")
        for name, arr in (("strata", strata_raw), ("weights", weights),
                          ("sizes", sizes), ("covariates", covariates)):
            if arr.shape[0] != n:
                raise InputError(f"{name} has {arr.shape[0]} rows, counts has {n}")
        # dense 0-based stratum indices in order of first appearance
        uniq, first = np.unique(strata_raw, return_index=True)
        order = uniq[np.argsort(first)]
        lookup = {s: i for i, s in enumerate(order.tolist())}
        dense = np.array([lookup[s] for s in strata_raw.tolist()], dtype=int)

        if stratum_labels is None:
            stratum_labels = [str(s) for s in order.tolist()]
        if cluster_labels is None:
            cluster_labels = [str(i + 1) for i in range(n)]
        if len(stratum_labels) != len(order) or len(cluster_labels) != n:
            raise InputError("label lists do not match the data")

        self.records = tuple(
            ClusterRecord(int(dense[i]), i, float(weights[i]), int(sizes[i]),
                          counts[i], covariates[i])
            for i in range(n)
        )
        self.strata = dense
        self.weights = weights.copy()
        self.sizes = sizes.copy()
        self.counts = counts.copy()
        self.covariates = covariates.copy()
        for arr in (self.strata, self.weights, self.sizes, self.counts, self.covariates):
            arr.setflags(write=False)
        self.stratum_labels = tuple(stratum_labels)
        self.cluster_labels = tuple(cluster_labels)
        self.tau = float(np.sum(self.weights * self.sizes))

    @classmethod
    def from_records(cls, records, stratum_labels=None, cluster_labels=None):
        records = list(records)
        if not records:
            raise InputError("a dataset needs at least one cluster")
        dims = {(r.counts.size, r.covariates.size) for r in records}
        if len(dims) != 1:
            raise InputError("all clusters must share the number of categories and covariates")
        return cls(
            [r.stratum for r in records],
            [r.weight for r in records],
            [r.size for r in records],
            np.vstack([r.counts for r in records]),
            np.vstack([r.covariates for r in records]),
            stratum_labels=stratum_labels,
            cluster_labels=cluster_labels,
        )

    @property
    def n_clusters(self):
        return self.counts.shape[0]

    @property
    def num_categories(self):
        return self.counts.shape[1]

    @property
    def num_covariates(self):
        return self.covariates.shape[1]

    @property
    def n_strata(self):
        return len(self.stratum_labels)

    @property
    def d(self):
        return self.num_categories - 1

    @property
    def k(self):
        return self.num_covariates

    @property
    def responses(self):
        """(n,) observed totals, sum of counts per cluster."""
        return self.counts.sum(axis=1)

    def stratum(self, h):
        """Return the sub-dataset holding stratum ``h`` (dense index)."""
        idx = np.flatnonzero(self.strata == h)
        if idx.size == 0:
            raise InputError(f"no stratum with index {h}")
        return self.subset(idx)

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = [self.stratum_labels[h] for h in np.unique(self.strata[idx])]
        return SurveyDataset(
            self.strata[idx], self.weights[idx], self.sizes[idx],
            self.counts[idx], self.covariates[idx],
            stratum_labels=[lab for lab in self.stratum_labels if lab in labels],
            cluster_labels=[self.cluster_labels[i] for i in idx],
        )

    def with_weights(self, weights):
        return SurveyDataset(
            self.strata, weights, self.sizes, self.counts, self.covariates,
            self.stratum_labels, self.cluster_labels,
        )

    def with_counts(self, counts):
        return SurveyDataset(
            self.strata, self.weights, self.sizes, counts, self.covariates,
            self.stratum_labels, self.cluster_labels,
        )

    def __repr__(self):
        return (f"SurveyDataset(n_clusters={self.n_clusters}, n_strata={self.n_strata}, "
                f"categories={self.num_categories}, covariates={self.num_covariates})")


def check_beta(beta, d, k):
    """Validate a stacked coefficient vector and return it as a float array."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != d * k:
        raise InputError(f"beta has length {beta.size}, expected d*k = {d * k}")
    if not np.all(np.isfinite(beta)):
        raise InputError("beta must be finite")
    return beta


def cluster_probabilities(covariates, beta):
    """Multinomial logit probabilities for every row of ``covariates``.

    Args:
        covariates: (n, k) matrix.
        beta: stacked coefficients of length d*k, block r holding beta_r.

    Returns:
        (n, d+1) matrix; the last column is the reference category.
    """
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    k = covariates.shape[1]
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size % k:
        raise InputError(f"beta length {beta.size} is not a multiple of k = {k}")
    eta = covariates @ beta.reshape(-1, k).T
    eta = np.hstack([eta, np.zeros((eta.shape[0], 1))])
    eta -= eta.max(axis=1, keepdims=True)
    expo = np.exp(eta)
    return expo / expo.sum(axis=1, keepdims=True)


def link_probabilities(x, beta):
    """Probability vector pi(beta) for a single covariate vector ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise InputError("covariate vector is empty")
    return cluster_probabilities(x[None, :], beta)[0]


def theoretical_vector(data, beta):
    """Stacked (1/tau) * w_hi m_hi pi_hi(beta), one block per cluster."""
    beta = check_beta(beta, data.d, data.k)
    probs = cluster_probabilities(data.covariates, beta)
    return ((data.weights * data.sizes)[:, None] * probs / data.tau).reshape(-1)


def empirical_vector(data):
    """Stacked (1/tau) * w_hi y_hi, one block per cluster.

    Sums to one unless some cluster has item nonresponse.
    """
    return (data.weights[:, None] * data.counts / data.tau).reshape(-1)


def category_presence(data):
    """Boolean mask of categories observed at least once anywhere."""
    return data.counts.sum(axis=0) > 0


# ---------------------------------------------------------------- CSV I/O

def _parse_float(text, line, column):
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise InputError(f"line {line}: column {column!r}: not a number: {text!r}") from None


def _numbered(header, prefix):
    cols = [c for c in header if c.startswith(prefix) and c[len(prefix):].isdigit()]
    cols.sort(key=lambda c: int(c[len(prefix):]))
    expected = [f"{prefix}{i}" for i in range(1, len(cols) + 1)]
    if cols != expected:
        raise InputError(f"line 1: columns {prefix}1..{prefix}N must be numbered contiguously")
    return cols


def read_survey_csv(path, num_categories=None):
    """Read a cluster-level or individual-level survey CSV.

    Cluster-level files have the header ``stratum,cluster,weight,m,y1..yC,x1..xk``.
    Individual-level files have ``stratum,cluster,weight,category,x1..xk`` with
    one row per respondent and are aggregated by (stratum, cluster).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [(i, row) for i, row in enumerate(reader, start=2) if any(c.strip() for c in row)]
    if "category" in header:
        return _read_individual(header, rows, num_categories)
    return _read_cluster(header, rows)


def _require(header, names):
    missing = [n for n in names if n not in header]
    if missing:
        raise InputError(f"line 1: missing column(s) {', '.join(missing)}")


def _read_cluster(header, rows):
    _require(header, ["stratum", "cluster", "weight", "m"])
    ycols = _numbered(header, "y")
    xcols = _numbered(header, "x")
    if len(ycols) < 2 or not xcols:
        raise InputError("line 1: need at least y1,y2 and x1")
    pos = {c: header.index(c) for c in header}
    strata, clusters, weights, sizes, counts, covs = [], [], [], [], [], []
    seen = set()
    for line, row in rows:
        if len(row) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        row = [c.strip() for c in row]
        key = (row[pos["stratum"]], row[pos["cluster"]])
        if key in seen:
            raise InputError(f"line {line}: duplicate cluster {key[1]!r} in stratum {key[0]!r}")
        seen.add(key)
        strata.append(key[0])
        clusters.append(key[1])
        weights.append(_parse_float(row[pos["weight"]], line, "weight"))
        sizes.append(_parse_float(row[pos["m"]], line, "m"))
        counts.append([_parse_float(row[pos[c]], line, c) for c in ycols])
        covs.append([_parse_float(row[pos[c]], line, c) for c in xcols])
        try:
            ClusterRecord(0, 0, weights[-1], sizes[-1], counts[-1], covs[-1])
        except InputError as exc:
            raise InputError(f"line {line}: {exc}") from None
    if not rows:
        raise InputError("no data rows")
    return _assemble(strata, clusters, weights, sizes, counts, covs)


def _read_individual(header, rows, num_categories):
    _require(header, ["stratum", "cluster", "weight", "category"])
    xcols = _numbered(header, "x")
    if not xcols:
        raise InputError("line 1: need at least x1")
    pos = {c: header.index(c) for c in header}
    groups = {}
    for line, row in rows:
        if len(row) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        row = [c.strip() for c in row]
        key = (row[pos["stratum"]], row[pos["cluster"]])
        weight = _parse_float(row[pos["weight"]], line, "weight")
        cat = _parse_float(row[pos["category"]], line, "category")
        if cat != int(cat) or cat < 1:
            raise InputError(f"line {line}: category must be a positive integer, got {cat:g}")
        x = tuple(_parse_float(row[pos[c]], line, c) for c in xcols)
        if key in groups:
            g = groups[key]
            if g["weight"] != weight:
                raise InputError(f"line {line}: weight differs within cluster {key[1]!r}")
            if g["x"] != x:
                raise InputError(f"line {line}: covariates differ within cluster {key[1]!r}")
            g["cats"].append(int(cat))
        else:
            groups[key] = {"weight": weight, "x": x, "cats": [int(cat)]}
    if not groups:
        raise InputError("no data rows")
    ncat = max(max(g["cats"]) for g in groups.values())
    if num_categories is not None:
        if ncat > num_categories:
            raise InputError(f"category {ncat} exceeds the declared {num_categories} categories")
        ncat = num_categories
    if ncat < 2:
        raise InputError("need at least two response categories")
    strata, clusters, weights, sizes, counts, covs = [], [], [], [], [], []
    for (s, c), g in groups.items():
        y = np.bincount(np.array(g["cats"]) - 1, minlength=ncat).astype(float)
        strata.append(s)
        clusters.append(c)
        weights.append(g["weight"])
        sizes.append(float(len(g["cats"])))
        counts.append(y)
        covs.append(list(g["x"]))
    return _assemble(strata, clusters, weights, sizes, counts, covs)


def _assemble(strata, clusters, weights, sizes, counts, covs):
    order = list(dict.fromkeys(strata))
    lookup = {s: i for i, s in enumerate(order)}
    dense = [lookup[s] for s in strata]
    # group rows by stratum, keeping first-appearance order inside each stratum
    perm = sorted(range(len(dense)), key=lambda i: (dense[i], i))
    return SurveyDataset(
        [dense[i] for i in perm],
        [weights[i] for i in perm],
        [sizes[i] for i in perm],
        np.array([counts[i] for i in perm], dtype=float),
        np.array([covs[i] for i in perm], dtype=float),
        stratum_labels=order,
        cluster_labels=[clusters[i] for i in perm],
    )


def write_survey_csv(data, path):
    """Write ``data`` as a cluster-level CSV readable by :func:`read_survey_csv`."""
    header = (["stratum", "cluster", "weight", "m"]
              + [f"y{s + 1}" for s in range(data.num_categories)]
              + [f"x{j + 1}" for j in range(data.num_covariates)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, rec in enumerate(data.records):
            writer.writerow(
                [data.stratum_labels[rec.stratum], data.cluster_labels[i], repr(rec.weight),
                 int(rec.size)]
                + [int(c) for c in rec.counts]
                + [repr(float(v)) for v in rec.covariates]
            )
