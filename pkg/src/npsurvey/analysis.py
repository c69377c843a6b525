"""End-to-end two-sample analysis producing a :class:`~npsurvey.io.Report`."""

from __future__ import annotations

import platform
import warnings

import numpy as np
import scipy

from .estimators import ignorable_baselines, mu_aipw, mu_el, mu_ipw, mu_naive, mu_reg
from .exceptions import EstimationError
from .fitting import (
    MULTIPLE,
    el_weights,
    fit_outcome_mle,
    fit_theta_calibration,
    fit_theta_pml,
    identifiability_diagnostic,
)
from .io import AnalysisConfig, EstimateRow, ParameterRow, Report
from .model import Family, SampleA, SampleB
from .variance import interval_for

PROPOSED = ("IPW", "REG", "AIPW")
BASELINES = ("REG2", "IPW2", "DR2")


def _observed_se(info) -> list:
    """Standard errors from the inverse observed information (``None`` when not invertible)."""
    info = np.asarray(info, dtype=float)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return [None] * info.shape[0]
    diag = np.diag(cov)
    return [float(np.sqrt(v)) if v > 0 and np.isfinite(v) else None for v in diag]


def theta_names(schema) -> list:
    return ["alpha", *(f"beta_{n}" for n in schema.shared_names), "gamma"]


def xi_names(schema, family) -> list:
    names = ["intercept", *schema.names]
    return names + ["sigma2"] if Family.parse(family) is Family.GAUSSIAN else names


def provenance(config: AnalysisConfig) -> dict:
    from . import __version__

    return {
        "config_hash": config.digest(),
        "seed": int(config.seed),
        "versions": {
            "npsurvey": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _messages(caught) -> list:
    seen = []
    for w in caught:
        text = f"{w.category.__name__}: {w.message}"
        if text not in seen:
            seen.append(text)
    return seen


def run_analysis(sample_a: SampleA, sample_b: SampleB, config: AnalysisConfig) -> Report:
    """Fit both models, compute the requested estimators and their intervals.

    Failures of the outcome or pseudo-likelihood fit are fatal (they raise
    :class:`EstimationError`); failures confined to one estimator are recorded
    in ``Report.warnings`` and that row is omitted.
    """
    wanted = config.estimators
    report = Report(rows=[], level=float(config.level), provenance=provenance(config))
    results = {}

    if "NAIVE" in wanted:
        results["NAIVE"] = EstimateRow("NAIVE", mu_naive(sample_a).value)

    needs_xi = any(k != "NAIVE" for k in wanted)
    needs_theta = any(k in PROPOSED for k in wanted)
    xi_hat = theta_fit = None

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if needs_xi:
            xi_fit = fit_outcome_mle(sample_a, config.family)
            xi_hat = xi_fit.params
            report.xi = [
                ParameterRow(n, float(v), s)
                for n, v, s in zip(
                    xi_names(sample_a.schema, config.family), xi_hat.to_vector(), _observed_se(xi_fit.info_matrix)
                )
            ]
        if needs_theta:
            theta_fit = fit_theta_pml(
                xi_hat,
                sample_a,
                sample_b,
                tol=config.tolerance("pml_tol"),
                max_iter=int(config.tolerance("max_iter")),
                allow_no_instrument=config.allow_no_instrument,
            )
            theta = theta_fit.params
            report.theta = [
                ParameterRow(n, float(v), s)
                for n, v, s in zip(
                    theta_names(sample_a.schema), theta.to_vector(), _observed_se(theta_fit.info_matrix)
                )
            ]
            diag = identifiability_diagnostic(theta_fit)
            if diag["weakly_identified"]:
                report.warnings.append(
                    "gamma appears weakly identified "
                    f"(condition number {diag['condition_number']:.3g}, "
                    f"relative profile curvature {diag['gamma_profile_curvature']:.3g})"
                )
            for kind in PROPOSED:
                if kind not in wanted:
                    continue
                est = {
                    "IPW": lambda: mu_ipw(sample_a, theta),
                    "REG": lambda: mu_reg(sample_b, theta, xi_hat),
                    "AIPW": lambda: mu_aipw(sample_a, sample_b, theta, xi_hat),
                }[kind]()
                ci = interval_for(est, sample_a, sample_b, theta, xi_hat, level=config.level)
                diag_row = {}
                if est.n_hat_a is not None:
                    diag_row["n_hat_a"] = float(est.n_hat_a)
                if est.n_hat_b is not None:
                    diag_row["n_hat_b"] = float(est.n_hat_b)
                results[kind] = EstimateRow(kind, est.value, ci.se, ci.ci_low, ci.ci_high, diag_row)

        if any(k in BASELINES for k in wanted):
            try:
                for est in ignorable_baselines(sample_a, sample_b, xi_hat=xi_hat, family=config.family):
                    if est.kind in wanted:
                        results[est.kind] = EstimateRow(est.kind, est.value)
            except EstimationError as exc:
                report.warnings.append(f"ignorable baselines failed: {type(exc).__name__}: {exc}")

        if "EL" in wanted:
            try:
                cal = fit_theta_calibration(
                    sample_a,
                    sample_b,
                    n_starts=int(config.tolerance("n_starts")),
                    seed=int(config.seed),
                    theta_pl=theta_fit.params if theta_fit is not None else None,
                    root_tol=config.tolerance("root_tol"),
                )
                weights = el_weights(cal.params, xi_hat, sample_a, sample_b)
                results["EL"] = EstimateRow(
                    "EL", mu_el(weights, sample_a).value, diagnostics={"calibration_roots": cal.n_roots}
                )
                if cal.multiplicity == MULTIPLE:
                    report.warnings.append(
                        f"calibration equations have {cal.n_roots} distinct roots; EL uses the one nearest the "
                        "pseudo-likelihood estimate"
                    )
            except EstimationError as exc:
                report.warnings.append(f"EL estimator failed: {type(exc).__name__}: {exc}")

    report.warnings.extend(_messages(caught))
    report.rows = [results[k] for k in wanted if k in results]
    if not report.rows:
        raise EstimationError("no requested estimator could be computed: " + "; ".join(report.warnings))
    return report
