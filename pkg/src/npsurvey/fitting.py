"""Parameter estimation for the outcome and participation models.

Step one fits the outcome model on the non-probability sample by maximum
likelihood.  Step two maximises the pseudo log-likelihood of the participation
parameters, in which the population total of ``log pr(R=0|x)`` is replaced by
its survey-weighted estimate from the reference sample.

The calibration estimator and empirical-likelihood weights are included as
baselines.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import expit

from .exceptions import (
    ConvergenceError,
    DomainError,
    HullViolationError,
    IdentifiabilityWarning,
    NoRootError,
    SeparationError,
    SingularError,
)
from .model import (
    Family,
    SampleA,
    SampleB,
    Theta,
    Xi,
    check_response,
    cumulant,
    design_matrix,
    linear_predictor,
    outcome_loglik,
    participation_prob,
    pi_marginal,
)

logger = logging.getLogger(__name__)

UNIQUE = "unique"
MULTIPLE = "multiple"
UNKNOWN = "unknown"

COND_LIMIT = 1e10
SEPARATION_BOUND = 30.0


@dataclass
class FitResult:
    """Outcome of one optimisation.

    ``multiplicity`` is ``"unique"``, ``"multiple"`` (with ``n_roots >= 2``) or
    ``"unknown"``; ``roots`` lists the distinct optima found by a multistart.
    """

    params: object
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    info_matrix: np.ndarray
    multiplicity: str = UNKNOWN
    n_roots: int = 0
    roots: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


@dataclass
class ELWeights:
    p: np.ndarray
    lagrange: np.ndarray
    converged: bool
    residual: float = 0.0


# ---------------------------------------------------------------------------
# outcome model MLE
# ---------------------------------------------------------------------------


def fit_outcome_mle(sample_a: SampleA, family, tol: float = 1e-10, max_iter: int = 100) -> FitResult:
    """Maximum likelihood fit of ``f(y | x; xi)`` on the non-probability sample.

    Bernoulli-logistic uses Newton-Raphson with step halving; Gaussian-linear
    has the closed-form least-squares solution with the MLE variance (divisor n).
    """
    family = Family.parse(family)
    check_response(sample_a.y, family)
    Xt = design_matrix(sample_a.X)
    y = sample_a.y
    n, k = Xt.shape
    if n <= k:
        raise DomainError(f"outcome MLE needs n_A > p + 1 (n_A={n}, p + 1={k})")

    if family is Family.GAUSSIAN:
        coef, _, rank, _ = np.linalg.lstsq(Xt, y, rcond=None)
        if rank < k:
            raise SingularError("outcome design matrix is rank deficient")
        r = y - Xt @ coef
        sigma2 = float(r @ r / n)
        if sigma2 <= 0:
            raise SingularError("zero residual variance in Gaussian outcome fit")
        xi = Xi(family, coef, sigma2)
        info = -outcome_loglik(sample_a.X, y, xi, 2).sum(axis=0)
        grad = outcome_loglik(sample_a.X, y, xi, 1).sum(axis=0)
        return FitResult(
            params=xi,
            objective_value=float(outcome_loglik(sample_a.X, y, xi, 0).sum()),
            gradient_norm=float(np.max(np.abs(grad))),
            iterations=1,
            converged=True,
            info_matrix=info,
            multiplicity=UNIQUE,
            n_roots=1,
        )

    if np.all(y == y[0]):
        raise SeparationError("all responses are identical; the logistic MLE diverges")

    def loglik(c):
        return float(outcome_loglik(sample_a.X, y, Xi(family, c), 0).sum())

    coef = np.zeros(k)
    coef[0] = np.log(y.mean() / (1.0 - y.mean()))
    value = loglik(coef)
    grad = np.zeros(k)
    info = np.eye(k)
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(Xt @ coef)
        grad = Xt.T @ (y - p)
        info = (Xt * (p * (1.0 - p))[:, None]).T @ Xt
        if np.max(np.abs(grad)) <= tol * max(1.0, n):
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularError("singular information in logistic outcome fit") from None
        t = 1.0
        while True:
            trial = coef + t * step
            new = loglik(trial)
            if new >= value - 1e-12 * abs(value) or t < 1e-10:
                break
            t *= 0.5
        coef, value = trial, new
        if np.max(np.abs(coef)) > SEPARATION_BOUND:
            raise SeparationError(
                f"logistic coefficients exceed {SEPARATION_BOUND:g} in magnitude; "
                "the data appear (quasi-)separated"
            )
    p = expit(Xt @ coef)
    grad = Xt.T @ (y - p)
    info = (Xt * (p * (1.0 - p))[:, None]).T @ Xt
    if np.linalg.cond(info) > 1e14:
        raise SingularError("singular information in logistic outcome fit")
    gnorm = float(np.max(np.abs(grad)))
    return FitResult(
        params=Xi(family, coef),
        objective_value=loglik(coef),
        gradient_norm=gnorm,
        iterations=it,
        converged=gnorm <= tol * max(1.0, n),
        info_matrix=info,
        multiplicity=UNIQUE,
        n_roots=1,
    )


# ---------------------------------------------------------------------------
# pseudo log-likelihood
# ---------------------------------------------------------------------------


def _eta(U, X, theta: Theta, xi: Xi):
    return theta.alpha + U @ theta.beta + cumulant(X, theta.gamma, xi, 0)


def pseudo_loglik(theta: Theta, xi: Xi, sample_a: SampleA, sample_b: SampleB) -> float:
    """Pseudo log-likelihood of theta given the outcome parameters."""
    eta_a = _eta(sample_a.U, sample_a.X, theta, xi)
    eta_b = _eta(sample_b.U, sample_b.X, theta, xi)
    d = sample_b.d
    return float(-eta_a.sum() + d @ eta_b - d @ np.logaddexp(0.0, eta_b))


def _h(U, X, theta, xi):
    return np.column_stack([np.ones(U.shape[0]), U, cumulant(X, theta.gamma, xi, 1)])


def pseudo_score(theta: Theta, xi: Xi, sample_a: SampleA, sample_b: SampleB) -> np.ndarray:
    """Gradient of :func:`pseudo_loglik` in ``(alpha, beta, gamma)``."""
    h_a = _h(sample_a.U, sample_a.X, theta, xi)
    h_b = _h(sample_b.U, sample_b.X, theta, xi)
    pi_b = expit(-_eta(sample_b.U, sample_b.X, theta, xi))
    return -h_a.sum(axis=0) + (sample_b.d * pi_b) @ h_b


def pseudo_hessian(theta: Theta, xi: Xi, sample_a: SampleA, sample_b: SampleB) -> np.ndarray:
    """Analytic Hessian of :func:`pseudo_loglik`; only ``h``'s last entry depends on gamma."""
    h_b = _h(sample_b.U, sample_b.X, theta, xi)
    pi_b = expit(-_eta(sample_b.U, sample_b.X, theta, xi))
    d = sample_b.d
    c2_a = cumulant(sample_a.X, theta.gamma, xi, 2)
    c2_b = cumulant(sample_b.X, theta.gamma, xi, 2)
    H = -(h_b * (d * pi_b * (1.0 - pi_b))[:, None]).T @ h_b
    H[-1, -1] += -c2_a.sum() + d @ (pi_b * c2_b)
    return H


def _newton_polish(fun, grad, hess, v, tol, max_iter=50):
    """Damped Newton refinement of a maximiser; never accepts a decrease in ``fun``."""
    f = fun(v)
    g = grad(v)
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            break
        H = hess(v)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if g @ step <= 0:
            # not an ascent direction (H not negative definite here)
            step = g / max(np.max(np.abs(np.diag(H))), 1.0)
        t = 1.0
        accepted = False
        while t > 1e-12:
            trial = v + t * step
            ft = fun(trial)
            gt = grad(trial)
            if np.isfinite(ft) and (ft >= f - 1e-12 * abs(f) or np.max(np.abs(gt)) < np.max(np.abs(g))):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        v, f, g = trial, ft, gt
    return v, f, g


def fit_ignorable(sample_a: SampleA, sample_b: SampleB, tol: float = 1e-10, max_iter: int = 100) -> Theta:
    """Pseudo-likelihood fit with gamma held at zero (the ignorable sub-problem).

    The objective is concave, so plain Newton iterations from the
    intercept-only solution converge.
    """
    U_a, U_b, d = sample_a.U, sample_b.U, sample_b.d
    H_a = np.column_stack([np.ones(sample_a.n), U_a])
    H_b = np.column_stack([np.ones(sample_b.n), U_b])
    n_a, N_b = sample_a.n, sample_b.N_hat
    if N_b <= n_a:
        raise DomainError(f"estimated population size {N_b:g} does not exceed n_A={n_a}")
    v = np.zeros(H_a.shape[1])
    v[0] = np.log((N_b - n_a) / n_a)
    sum_a = H_a.sum(axis=0)

    def fun(v):
        eta = H_b @ v
        return float(-(H_a @ v).sum() + d @ eta - d @ np.logaddexp(0.0, eta))

    def grad(v):
        return -sum_a + (d * expit(-(H_b @ v))) @ H_b

    def hess(v):
        pi = expit(-(H_b @ v))
        return -(H_b * (d * pi * (1.0 - pi))[:, None]).T @ H_b

    v, _, g = _newton_polish(fun, grad, hess, v, tol * max(1.0, n_a), max_iter=max_iter)
    return Theta(v[0], v[1:], 0.0)


def fit_theta_pml(
    xi_hat: Xi,
    sample_a: SampleA,
    sample_b: SampleB,
    init: Optional[Theta] = None,
    tol: float = 1e-6,
    max_iter: int = 500,
    allow_no_instrument: bool = False,
) -> FitResult:
    """Maximum pseudo-likelihood estimate of ``theta`` with ``xi`` fixed at ``xi_hat``.

    BFGS with the analytic gradient from the ignorable solution (gamma released
    from 0), followed by Newton refinement until ``max|score| <= tol``.
    """
    if not sample_a.schema.instrument_names and not allow_no_instrument:
        raise DomainError(
            "no instrument column declared; theta may not be identifiable "
            "(pass allow_no_instrument=True to override)"
        )
    if init is None:
        ign = fit_ignorable(sample_a, sample_b)
        init = Theta(ign.alpha, ign.beta, 0.0)
    n_a = sample_a.n

    def fun(v):
        return pseudo_loglik(Theta.from_vector(v), xi_hat, sample_a, sample_b)

    def grad(v):
        return pseudo_score(Theta.from_vector(v), xi_hat, sample_a, sample_b)

    def hess(v):
        return pseudo_hessian(Theta.from_vector(v), xi_hat, sample_a, sample_b)

    def neg(v):
        try:
            th = Theta.from_vector(v)
        except DomainError:
            return np.inf, np.zeros_like(v)
        return (
            -pseudo_loglik(th, xi_hat, sample_a, sample_b) / n_a,
            -pseudo_score(th, xi_hat, sample_a, sample_b) / n_a,
        )

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(
            neg,
            init.to_vector(),
            jac=True,
            method="BFGS",
            options={"gtol": 1e-9, "maxiter": max_iter},
        )
    v = res.x
    v, f, g = _newton_polish(fun, grad, hess, v, 0.01 * tol)
    gnorm = float(np.max(np.abs(g)))
    theta = Theta.from_vector(v)
    info = -hess(v)
    iterations = int(res.nit)
    converged = gnorm <= tol
    if not converged:
        raise ConvergenceError(
            f"pseudo-likelihood fit did not converge (max|score|={gnorm:.3g} after "
            f"{iterations} BFGS iterations)",
            best=theta,
        )
    fit = FitResult(
        params=theta,
        objective_value=f,
        gradient_norm=gnorm,
        iterations=iterations,
        converged=True,
        info_matrix=info,
        multiplicity=UNKNOWN,
    )
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        msg = f"pseudo-likelihood information is ill-conditioned (cond={cond:.3g})"
        fit.warnings.append(msg)
        warnings.warn(msg, IdentifiabilityWarning, stacklevel=2)
    return fit


def identifiability_diagnostic(fit: FitResult, curvature_tol: float = 1e-6) -> dict:
    """Conditioning summary of a theta fit's observed information.

    ``gamma_profile_curvature`` is the Schur complement of the gamma entry
    divided by the gamma diagonal entry, so it is scale free and lies in [0, 1]
    for a positive definite matrix.  The flag is advisory.
    """
    info = np.asarray(fit.info_matrix, dtype=float)
    info = 0.5 * (info + info.T)
    eig = np.linalg.eigvalsh(info)
    cond = float(np.inf) if eig[0] <= 0 else float(eig[-1] / eig[0])
    rest = info[:-1, :-1]
    cross = info[:-1, -1]
    g2 = info[-1, -1]
    if g2 <= 0:
        rel = 0.0
    else:
        schur = g2 - cross @ np.linalg.pinv(rest, hermitian=True) @ cross
        rel = float(max(schur, 0.0) / g2)
    return {
        "condition_number": cond,
        "min_eigenvalue": float(eig[0]),
        "gamma_profile_curvature": rel,
        "weakly_identified": bool(rel < curvature_tol or cond > COND_LIMIT),
    }


# ---------------------------------------------------------------------------
# calibration estimator
# ---------------------------------------------------------------------------

_EXP_CAP = 700.0


def _calibration_blocks(sample_a, sample_b):
    Z_a = np.column_stack([np.ones(sample_a.n), sample_a.X])
    Z_b = np.column_stack([np.ones(sample_b.n), sample_b.X])
    target = sample_b.d @ Z_b
    return Z_a, target


def calibration_residual(theta: Theta, sample_a: SampleA, sample_b: SampleB) -> np.ndarray:
    """Calibration moment ``g(theta)`` divided by the estimated population size."""
    Z_a, target = _calibration_blocks(sample_a, sample_b)
    eta = np.minimum(linear_predictor(sample_a.U, sample_a.y, theta), _EXP_CAP)
    return ((1.0 + np.exp(eta)) @ Z_a - target) / sample_b.N_hat


def fit_theta_calibration(
    sample_a: SampleA,
    sample_b: SampleB,
    n_starts: int = 20,
    seed=0,
    theta_pl: Optional[Theta] = None,
    root_tol: float = 1e-6,
    fail_tol: float = 1e-4,
    cluster_radius: float = 1e-3,
    start_scale: float = 1.0,
) -> FitResult:
    """Multistart Levenberg-Marquardt solution of the calibration equations.

    Half of the starts scatter around the pseudo-likelihood solution (computed
    here when ``theta_pl`` is not supplied), the rest around the ignorable
    intercept-only point with all slopes and gamma at zero.  Converged solutions
    (``||g|| <= root_tol``) are clustered with the given Euclidean radius; two or
    more clusters mark the fit as having multiple roots.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    Z_a, target = _calibration_blocks(sample_a, sample_b)
    U, y = sample_a.U, sample_a.y
    H_a = np.column_stack([np.ones(sample_a.n), U, y])
    N_b = sample_b.N_hat
    k = H_a.shape[1]
    if Z_a.shape[1] < k:
        raise DomainError("calibration system has fewer equations than parameters")

    def resid(v):
        eta = np.minimum(H_a @ v, _EXP_CAP)
        return ((1.0 + np.exp(eta)) @ Z_a - target) / N_b

    def jac(v):
        eta = np.minimum(H_a @ v, _EXP_CAP)
        return (Z_a * np.exp(eta)[:, None]).T @ H_a / N_b

    rng = np.random.default_rng(seed)
    if theta_pl is None:
        ign = fit_ignorable(sample_a, sample_b)
        centre_pl = np.concatenate([[ign.alpha], ign.beta, [0.0]])
    else:
        centre_pl = theta_pl.to_vector()
    centre_zero = np.zeros(k)
    centre_zero[0] = np.log(max(N_b - sample_a.n, 1.0) / sample_a.n)
    starts = [centre_pl]
    for s in range(1, n_starts):
        centre = centre_pl if s % 2 == 0 else centre_zero
        starts.append(centre + start_scale * rng.standard_normal(k))

    solutions = []
    best_v, best_norm, total_nfev = None, np.inf, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for v0 in starts:
            try:
                res = optimize.least_squares(
                    resid, v0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000
                )
            except (ValueError, np.linalg.LinAlgError):
                continue
            total_nfev += int(res.nfev)
            if not np.all(np.isfinite(res.x)):
                continue
            norm = float(np.linalg.norm(resid(res.x)))
            if norm < best_norm:
                best_v, best_norm = res.x, norm
            if norm <= root_tol:
                solutions.append(res.x)

    if best_v is None or best_norm > fail_tol:
        raise NoRootError(f"no calibration root found (min ||g|| = {best_norm:.3g})")

    clusters = []
    for v in solutions:
        for c in clusters:
            if np.linalg.norm(v - c[0]) <= cluster_radius:
                c.append(v)
                break
        else:
            clusters.append([v])
    # each cluster is represented by its member with the smallest residual
    roots = [min(c, key=lambda v: np.linalg.norm(resid(v))) for c in clusters]
    if roots:
        # the root nearest the first start (the PL centre) leads
        primary = min(roots, key=lambda r: np.linalg.norm(r - starts[0]))
    else:
        primary = best_v
    value = float(np.linalg.norm(resid(primary)))
    J = jac(primary)
    info = J.T @ J
    n_roots = len(roots)
    multiplicity = UNIQUE if n_roots == 1 else (MULTIPLE if n_roots >= 2 else UNKNOWN)
    return FitResult(
        params=Theta.from_vector(primary),
        objective_value=value**2,
        gradient_norm=float(np.max(np.abs(resid(primary)))),
        iterations=total_nfev,
        converged=value <= root_tol,
        info_matrix=info,
        multiplicity=multiplicity,
        n_roots=n_roots,
        roots=[Theta.from_vector(r) for r in roots],
    )


# ---------------------------------------------------------------------------
# empirical likelihood weights
# ---------------------------------------------------------------------------


def _log_star(z, n):
    """Owen's pseudo-logarithm: log for z >= 1/n, quadratic continuation below."""
    eps = 1.0 / n
    out = np.empty_like(z)
    big = z >= eps
    out[big] = np.log(z[big])
    zs = z[~big]
    out[~big] = np.log(eps) - 1.5 + 2.0 * zs / eps - 0.5 * (zs / eps) ** 2
    d1 = np.where(big, 1.0 / np.where(big, z, 1.0), 2.0 / eps - z / eps**2)
    d2 = np.where(big, -1.0 / np.where(big, z, 1.0) ** 2, -1.0 / eps**2)
    return out, d1, d2


def el_dual(G: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> ELWeights:
    """Empirical-likelihood weights for moment functions ``G`` (rows sum to zero at target).

    Maximises ``sum log p_i`` subject to ``sum p_i = 1`` and ``sum p_i G_i = 0``
    through the dual ``p_i = 1 / (n (1 + lambda'G_i))``, using damped Newton
    (step halving) on the concave dual objective.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    n, k = G.shape
    lam = np.zeros(k)
    scale = np.maximum(np.max(np.abs(G), axis=0), 1e-300)

    def dual(lam):
        val, d1, d2 = _log_star(1.0 + G @ lam, n)
        return val.sum(), G.T @ d1, (G * d2[:, None]).T @ G

    val, grad, hess = dual(lam)
    converged = False
    for _ in range(max_iter):
        z = 1.0 + G @ lam
        if np.all(z >= 1.0 / n) and np.max(np.abs(grad) / scale) / n <= tol:
            converged = True
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            trial = lam + t * step
            tv, tg, th = dual(trial)
            if tv >= val - 1e-14 * abs(val):
                break
            t *= 0.5
        else:
            break
        lam, val, grad, hess = trial, tv, tg, th
        if np.max(np.abs(lam * scale)) > 1e8:
            break
    z = 1.0 + G @ lam
    if not converged or np.any(z < 1.0 / n):
        raise HullViolationError(
            "EL constraint targets are not inside the convex hull of the sample values"
        )
    p = 1.0 / (n * z)
    resid = float(np.max(np.abs(p @ G))) if k else 0.0
    return ELWeights(p=p, lagrange=lam, converged=True, residual=resid)


def el_weights(theta_cal: Theta, xi_hat: Xi, sample_a: SampleA, sample_b: SampleB, tol: float = 1e-10) -> ELWeights:
    """EL weights calibrated to the reference-sample propensity mean and covariate means."""
    d, N_b = sample_b.d, sample_b.N_hat
    pi_a = participation_prob(sample_a.U, sample_a.y, theta_cal)
    pi_target = d @ pi_marginal(sample_b.U, sample_b.X, theta_cal, xi_hat) / N_b
    x_target = d @ sample_b.X / N_b
    G = np.column_stack([pi_a - pi_target, sample_a.X - x_target])
    return el_dual(G, tol=tol)
