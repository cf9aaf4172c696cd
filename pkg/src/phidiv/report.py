"""Fit and design-effect reports shared by the CLI and library users."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .divergence import LAMBDA_ZERO_TOL
from .errors import PhidivError
from .estimation import fit
from .inference import (
    RangeWarning, common_size, design_effect, rho2_binder, rho2_moments,
    sandwich_covariance, stratum_design_effect,
)


@dataclass
class StratumRho2:
    stratum: str
    eligible: bool
    m_h: int | None = None
    nu_binder: float = float("nan")
    nu_moments: float = float("nan")
    rho2_binder: float = float("nan")
    rho2_moments: float = float("nan")
    design_effect: float = float("nan")
    note: str = ""


@dataclass
class FitReport:
    lam: float
    names: list
    estimates: np.ndarray
    std_errors: np.ndarray
    divergence_value: float
    design_effect: float
    strata: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    score_inf_norm: float = 0.0
    message: str = ""


def coefficient_names(d, k):
    return [f"beta_{r + 1}_{j + 1}" for r in range(d) for j in range(k)]


def stratum_overdispersion(data, beta_hat):
    """Per-stratum rho2 by both methods, flagging strata with unequal sizes."""
    rows = []
    for h in range(data.n_strata):
        sub = data.stratum(h)
        label = data.stratum_labels[h]
        m_h = common_size(sub)
        try:
            deff_h = stratum_design_effect(data, beta_hat, h)
        except PhidivError:
            deff_h = float("nan")
        if m_h is None:
            sizes = ",".join(str(int(v)) for v in sub.responses)
            rows.append(StratumRho2(label, False, design_effect=deff_h,
                                    note=f"ineligible: unequal cluster sizes ({sizes})"))
            continue
        row = StratumRho2(label, True, m_h, design_effect=deff_h)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RangeWarning)
            try:
                b = rho2_binder(sub, beta_hat)
                row.nu_binder, row.rho2_binder = b.nu_hat, b.rho2_hat
            except PhidivError as exc:
                row.note = f"binder: {exc}"
            try:
                mo = rho2_moments(sub, beta_hat)
                row.nu_moments, row.rho2_moments = mo.nu_hat, mo.rho2_hat
            except PhidivError as exc:
                row.note = (row.note + "; " if row.note else "") + f"moments: {exc}"
        if caught and not row.note:
            row.note = "estimate outside [0, 1]"
        rows.append(row)
    return rows


def build_fit_report(data, lam):
    """Fit one lambda and gather estimates, sandwich errors and rho2."""
    res = fit(data, lam)
    names = coefficient_names(data.d, data.k)
    try:
        comp = sandwich_covariance(data, res.beta_hat)
        se = comp.standard_errors
        deff = float(np.trace(comp.design_effect_matrix) / (data.d * data.k))
    except PhidivError:
        se = np.full(data.d * data.k, np.nan)
        deff = float("nan")
    return FitReport(
        lam=res.lam,
        names=names,
        estimates=res.beta_hat,
        std_errors=se,
        divergence_value=res.divergence_value,
        design_effect=deff,
        strata=stratum_overdispersion(data, res.beta_hat),
        converged=res.converged,
        iterations=res.iterations,
        score_inf_norm=res.score_inf_norm,
        message=res.message,
    )


# ------------------------------------------------------------------ formatting

def format_lambda(lam):
    """Short label, writing 2/3 as a fraction."""
    if abs(lam - 2.0 / 3.0) < 1e-12:
        return "2/3"
    if abs(lam) < LAMBDA_ZERO_TOL:
        return "0"
    return f"{lam:g}"


def _f4(value):
    return "nan" if not np.isfinite(value) else f"{value:.4f}"


def render_fit_human(reports):
    out = []
    for rep in reports:
        out.append(f"lambda = {format_lambda(rep.lam)}")
        out.append(f"  {'coefficient':<12} {'estimate':>10} {'std.error':>10}")
        for name, est, se in zip(rep.names, rep.estimates, rep.std_errors):
            out.append(f"  {name:<12} {_f4(est):>10} {_f4(se):>10}")
        out.append(f"  divergence     {_f4(rep.divergence_value)}")
        out.append(f"  design effect  {_f4(rep.design_effect)}")
        out.extend(_render_strata(rep.strata))
        status = "converged" if rep.converged else "NOT converged"
        out.append(f"  {status} after {rep.iterations} iterations "
                   f"(max |score| = {rep.score_inf_norm:.2e}; {rep.message})")
        out.append("")
    return "\n".join(out)


def _render_strata(rows):
    out = [f"  {'stratum':<12} {'m':>4} {'rho2 binder':>12} {'rho2 moments':>13}"]
    for r in rows:
        if not r.eligible:
            out.append(f"  {r.stratum:<12} {'-':>4} {'-':>12} {'-':>13}  {r.note}")
        else:
            note = f"  {r.note}" if r.note else ""
            out.append(f"  {r.stratum:<12} {r.m_h:>4} {_f4(r.rho2_binder):>12} "
                       f"{_f4(r.rho2_moments):>13}{note}")
    return out


def _rows_fit(rep):
    lam = repr(float(rep.lam))
    rows = [("coefficient", lam, n, repr(float(e)), repr(float(s)))
            for n, e, s in zip(rep.names, rep.estimates, rep.std_errors)]
    rows.append(("divergence", lam, "", repr(float(rep.divergence_value)), ""))
    rows.append(("design_effect", lam, "", repr(float(rep.design_effect)), ""))
    rows.extend(_rows_strata(lam, rep.strata))
    rows.append(("converged", lam, "", str(int(rep.converged)), ""))
    rows.append(("iterations", lam, "", str(rep.iterations), ""))
    rows.append(("score_inf_norm", lam, "", repr(float(rep.score_inf_norm)), ""))
    return rows


def _rows_strata(lam, strata):
    rows = []
    for r in strata:
        if not r.eligible:
            rows.append(("rho2_ineligible", lam, r.stratum, "", ""))
            continue
        rows.append(("rho2_binder", lam, r.stratum, repr(float(r.rho2_binder)), ""))
        rows.append(("rho2_moments", lam, r.stratum, repr(float(r.rho2_moments)), ""))
    return rows


def _csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("quantity", "lambda", "name", "value", "std_error"))
    writer.writerows(rows)
    return buf.getvalue()


def render_fit_csv(reports):
    rows = []
    for rep in reports:
        rows.extend(_rows_fit(rep))
    return _csv(rows)


# ------------------------------------------------------------- design effect

@dataclass
class DeffReport:
    lam: float
    design_effect: float
    strata: list
    converged: bool


def build_deff_report(data, lam):
    res = fit(data, lam)
    return DeffReport(res.lam, design_effect(data, res.beta_hat),
                      stratum_overdispersion(data, res.beta_hat), res.converged)


def render_deff_human(reports):
    out = []
    for rep in reports:
        out.append(f"lambda = {format_lambda(rep.lam)}")
        out.append(f"  design effect  {_f4(rep.design_effect)}")
        out.append(f"  {'stratum':<12} {'m':>4} {'deff_h':>8} {'nu binder':>10} "
                   f"{'nu moments':>11} {'rho2 binder':>12} {'rho2 moments':>13}")
        for r in rep.strata:
            if not r.eligible:
                out.append(f"  {r.stratum:<12} {'-':>4} {_f4(r.design_effect):>8} "
                           f"{'-':>10} {'-':>11} {'-':>12} {'-':>13}  {r.note}")
                continue
            note = f"  {r.note}" if r.note else ""
            out.append(f"  {r.stratum:<12} {r.m_h:>4} {_f4(r.design_effect):>8} "
                       f"{_f4(r.nu_binder):>10} {_f4(r.nu_moments):>11} "
                       f"{_f4(r.rho2_binder):>12} {_f4(r.rho2_moments):>13}{note}")
        if not rep.converged:
            out.append("  warning: the fit did not converge")
        out.append("")
    return "\n".join(out)


def render_deff_csv(reports):
    rows = []
    for rep in reports:
        lam = repr(float(rep.lam))
        rows.append(("design_effect", lam, "", repr(float(rep.design_effect)), ""))
        for r in rep.strata:
            rows.append(("stratum_design_effect", lam, r.stratum, repr(float(r.design_effect)), ""))
            if r.eligible:
                rows.append(("nu_binder", lam, r.stratum, repr(float(r.nu_binder)), ""))
                rows.append(("nu_moments", lam, r.stratum, repr(float(r.nu_moments)), ""))
        rows.extend(_rows_strata(lam, rep.strata))
        rows.append(("converged", lam, "", str(int(rep.converged)), ""))
    return _csv(rows)


__all__ = [
    "DeffReport", "FitReport", "StratumRho2", "build_deff_report",
    "build_fit_report", "coefficient_names", "format_lambda", "render_deff_csv",
    "render_deff_human", "render_fit_csv", "render_fit_human", "stratum_overdispersion",
]
