"""Plug-in asymptotic variances and Wald intervals for the REG, IPW and AIPW estimators.

Every asymptotic variance is a sum of two parts: a population average over
units, estimated from S_A by inverse-participation weighting normalised by
``N_A_hat``, and a design-based variance of a weighted S_B total.

Design variance of ``sum_{S_B} d_i g_i`` (returned already divided by
``N_B_hat``)::

    V = N_B_hat^{-1} sum_i sum_j (pi_ij - pi_i pi_j) / pi_ij * (g_i / pi_i)(g_j / pi_j)'

Under SRSWOR with ``f = n / N`` the diagonal weight is ``1 - f`` and every
off-diagonal weight equals ``-(1 - f) / (n - 1)``.  Collecting terms::

    sum_ij w_ij a_i a_j' = (1 - f) [n/(n-1) sum a_i a_i' - 1/(n-1) (sum a)(sum a)']
                         = (1 - f) n/(n-1) sum (a_i - a_bar)(a_i - a_bar)'

with ``a_i = g_i / f``, which is the O(n) path used for SRSWOR.  For ``n = 1``
there are no pairs and only the diagonal term remains.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .estimators import MeanEstimate
from .exceptions import DomainError, FlooringWarning, PseudoInverseWarning
from .model import (
    DesignKind,
    SampleA,
    SampleB,
    Theta,
    Xi,
    conditional_mean,
    conditional_mean_grads,
    cumulant_grad_xi,
    outcome_loglik,
    participation_prob,
    pi_marginal,
    score_vector,
)

COND_LIMIT = 1e10
VARIANCE_KINDS = ("IPW", "REG", "AIPW")


@dataclass
class VarianceComponents:
    kind: str
    V12: np.ndarray
    V22: np.ndarray
    V23: np.ndarray
    V33: np.ndarray
    V12e: np.ndarray
    V13e: np.ndarray
    V12a: np.ndarray
    hbar: float
    mu_plug: float
    warnings: list = field(default_factory=list)


@dataclass(frozen=True)
class IntervalEstimate:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    sigma2: Optional[float] = None


def _solve_row(M, v, what, notes):
    """``v' M^{-1}`` for symmetric M, falling back to a pseudo-inverse when ill-conditioned."""
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        msg = f"{what} is ill-conditioned (cond={cond:.3g}); using pseudo-inverse"
        notes.append(msg)
        warnings.warn(msg, PseudoInverseWarning, stacklevel=3)
        return np.asarray(v) @ np.linalg.pinv(M)
    return np.linalg.solve(M.T, np.asarray(v).T).T


def _srswor_joint(n: int, N: int) -> float:
    return n * (n - 1) / (N * (N - 1)) if N > 1 else 1.0


def srswor_joint_probabilities(n: int, N: int) -> np.ndarray:
    """Full ``(n, n)`` matrix of SRSWOR inclusion probabilities (diagonal ``n/N``)."""
    P = np.full((n, n), _srswor_joint(n, N))
    np.fill_diagonal(P, n / N)
    return P


def design_variance_direct(G, pi, pij, n_hat_b: float):
    """O(n^2) double-sum estimator for arbitrary first/second order probabilities."""
    G = np.asarray(G, dtype=float)
    scalar = G.ndim == 1
    A = (G[:, None] if scalar else G) / np.asarray(pi, dtype=float)[:, None]
    pi = np.asarray(pi, dtype=float)
    pij = np.asarray(pij, dtype=float)
    W = (pij - np.outer(pi, pi)) / pij
    V = A.T @ W @ A / n_hat_b
    return float(V[0, 0]) if scalar else V


def design_variance(G, sample_b: SampleB):
    """Design-based variance of ``N^{-1/2} sum_{S_B} d_i g_i`` for the sample's design.

    ``G`` is ``(n_B,)`` or ``(n_B, k)``; the result is a scalar or ``(k, k)`` matrix.
    """
    G = np.asarray(G, dtype=float)
    scalar = G.ndim == 1
    G2 = G[:, None] if scalar else G
    if G2.shape[0] != sample_b.n:
        raise DomainError("design variance input is not aligned with S_B")
    design = sample_b.design
    n_hat_b = sample_b.N_hat
    n = sample_b.n

    if design.kind is DesignKind.SRSWOR:
        if design.N is None:
            raise DomainError("SRSWOR design variance needs the population size N")
        f = design.n / design.N
        A = G2 / f
        if n == 1:
            V = (1.0 - f) * A.T @ A
        else:
            Ac = A - A.mean(axis=0)
            V = (1.0 - f) * n / (n - 1) * Ac.T @ Ac
        V = V / n_hat_b
    elif design.kind is DesignKind.GENERAL_HT:
        pij = design.joint_probabilities()
        if pij.shape[0] != n:
            raise DomainError("pairwise inclusion matrix does not match n_B")
        V = design_variance_direct(G2, np.diag(pij), pij, n_hat_b)
    else:
        # Hajek's approximation: c_i = (1 - pi_i) n / (n - 1), centred at the c-weighted mean
        pi = 1.0 / sample_b.d
        A = G2 / pi[:, None]
        c = (1.0 - pi) * (n / (n - 1) if n > 1 else 1.0)
        if c.sum() <= 0:
            V = np.zeros((G2.shape[1], G2.shape[1]))
        else:
            centre = c @ A / c.sum()
            Ac = A - centre
            V = (Ac * c[:, None]).T @ Ac / n_hat_b
    return float(V[0, 0]) if scalar else V


def population_size(sample_b: SampleB) -> float:
    """The known N when the design carries it, else ``N_B_hat``."""
    if sample_b.design is not None and sample_b.design.N is not None:
        return float(sample_b.design.N)
    return sample_b.N_hat


class _Plug:
    """Shared per-unit quantities on both samples at fitted parameters."""

    def __init__(self, sample_a: SampleA, sample_b: SampleB, theta: Theta, xi: Xi):
        self.y = sample_a.y
        self.pi_a = participation_prob(sample_a.U, sample_a.y, theta)
        self.w = 1.0 / self.pi_a
        self.n_hat_a = float(self.w.sum())
        self.hA = np.column_stack([np.ones(sample_a.n), sample_a.U, sample_a.y])
        self.h = score_vector(sample_a.U, sample_a.X, theta, xi)
        self.pi = pi_marginal(sample_a.U, sample_a.X, theta, xi)
        self.m = conditional_mean(sample_a.U, sample_a.X, theta, xi)
        self.dc = cumulant_grad_xi(sample_a.X, theta.gamma, xi)
        self.score = outcome_loglik(sample_a.X, sample_a.y, xi, 1)
        self.hess = outcome_loglik(sample_a.X, sample_a.y, xi, 2)
        self.gm_theta, self.gm_xi = conditional_mean_grads(sample_a.U, sample_a.X, theta, xi)
        self.h_b = score_vector(sample_b.U, sample_b.X, theta, xi)
        self.pi_b = pi_marginal(sample_b.U, sample_b.X, theta, xi)
        self.m_b = conditional_mean(sample_b.U, sample_b.X, theta, xi)
        self.d = sample_b.d

    def avg(self, values):
        """Population average estimated by ``N_A_hat^{-1} sum_{S_A} g_i / pi_A_i``."""
        values = np.asarray(values)
        return np.tensordot(self.w, values, axes=(0, 0)) / self.n_hat_a


def estimate_components(
    kind: str,
    sample_a: SampleA,
    sample_b: SampleB,
    theta: Theta,
    xi: Xi,
    mu_hat: float,
    v33_path: str = "cancelled",
    _plug: Optional[_Plug] = None,
) -> VarianceComponents:
    """Plug-in estimates of the matrices entering the asymptotic variances.

    ``v33_path="weighted"`` evaluates the outcome-Hessian average with the
    ``pi_A`` factor and inverse weights kept; ``"cancelled"`` uses the algebraically
    equal unweighted ``N_A_hat^{-1} sum_{S_A}`` form.
    """
    kind = kind.upper()
    if kind not in VARIANCE_KINDS:
        raise DomainError(f"no plug-in variance for estimator kind {kind!r}")
    P = _plug if _plug is not None else _Plug(sample_a, sample_b, theta, xi)
    one_m = 1.0 - P.pi_a
    ww = P.pi * (1.0 - P.pi)
    V12 = P.avg((one_m * (P.y - mu_hat))[:, None] * P.hA)
    V22 = -P.avg(ww[:, None, None] * P.h[:, :, None] * P.h[:, None, :])
    V23 = -P.avg(ww[:, None, None] * P.h[:, :, None] * P.dc[:, None, :])
    if v33_path == "weighted":
        V33 = P.avg(P.pi_a[:, None, None] * P.hess)
    elif v33_path == "cancelled":
        V33 = P.hess.sum(axis=0) / P.n_hat_a
    else:
        raise ValueError(f"unknown v33_path {v33_path!r}")
    V12e = P.avg(P.gm_theta)
    V13e = P.avg(P.gm_xi)
    hbar = float(P.avg(P.y - P.m))
    V12a = P.avg((one_m * (P.y - P.m - hbar))[:, None] * P.hA)
    return VarianceComponents(
        kind=kind,
        V12=V12,
        V22=0.5 * (V22 + V22.T),
        V23=V23,
        V33=0.5 * (V33 + V33.T),
        V12e=V12e,
        V13e=V13e,
        V12a=V12a,
        hbar=hbar,
        mu_plug=float(mu_hat),
    )


def sigma2_terms(
    kind: str,
    comps: VarianceComponents,
    sample_a: SampleA,
    sample_b: SampleB,
    theta: Theta,
    xi: Xi,
    _plug: Optional[_Plug] = None,
) -> tuple:
    """The S_A term and the design term of the asymptotic variance, unfloored."""
    kind = kind.upper()
    P = _plug if _plug is not None else _Plug(sample_a, sample_b, theta, xi)
    notes = comps.warnings
    mu = comps.mu_plug
    if kind == "IPW":
        b = _solve_row(comps.V22, comps.V12, "V22", notes)
        c = _solve_row(comps.V33, b @ comps.V23, "V33", notes)
        e = (P.y - mu) / P.pi_a + P.h @ b + P.score @ c
        g_b = P.pi_b * (P.h_b @ b)
    elif kind == "REG":
        b = _solve_row(comps.V22, comps.V12e, "V22", notes)
        c = _solve_row(comps.V33, b @ comps.V23 - comps.V13e, "V33", notes)
        e = P.h @ b + P.score @ c
        g_b = P.m_b - mu - P.pi_b * (P.h_b @ b)
    elif kind == "AIPW":
        b = _solve_row(comps.V22, comps.V12a, "V22", notes)
        c = _solve_row(comps.V33, b @ comps.V23, "V33", notes)
        e = (P.y - P.m - comps.hbar) / P.pi_a + P.h @ b + P.score @ c
        m_bar = float(P.d @ P.m_b) / float(P.d.sum())
        g_b = P.m_b - m_bar - P.pi_b * (P.h_b @ b)
    else:
        raise DomainError(f"no plug-in variance for estimator kind {kind!r}")
    # pi_A (1 - pi_A) e^2 averaged with weights 1 / pi_A
    term_a = float(((1.0 - P.pi_a) * e * e).sum() / P.n_hat_a)
    term_b = float(design_variance(g_b, sample_b))
    return term_a, term_b


def sigma2_plugin(
    kind: str,
    comps: VarianceComponents,
    sample_a: SampleA,
    sample_b: SampleB,
    theta: Theta,
    xi: Xi,
    _plug: Optional[_Plug] = None,
) -> float:
    """Plug-in asymptotic variance of ``sqrt(N)(mu_hat - mu0)``; negatives floor at 0."""
    term_a, term_b = sigma2_terms(kind, comps, sample_a, sample_b, theta, xi, _plug=_plug)
    total = term_a + term_b
    if not total >= 0:
        msg = f"negative plug-in variance {total:.3g} for {kind} floored at 0"
        comps.warnings.append(msg)
        warnings.warn(msg, FlooringWarning, stacklevel=2)
        return 0.0
    return total


def wald_ci(mu_hat, sigma2: float, n_hat_b: float, level: float = 0.95) -> IntervalEstimate:
    """Normal-theory interval ``mu_hat +/- z * sqrt(sigma2 / n_hat_b)``."""
    if not 0.0 < level < 1.0:
        raise DomainError("confidence level must lie in (0, 1)")
    if sigma2 < 0:
        raise DomainError("variance must be nonnegative")
    value = mu_hat.value if isinstance(mu_hat, MeanEstimate) else float(mu_hat)
    se = float(np.sqrt(sigma2 / n_hat_b))
    z = float(norm.ppf(1.0 - (1.0 - level) / 2.0))
    return IntervalEstimate(value, se, value - z * se, value + z * se, level, float(sigma2))


def interval_for(
    estimate: MeanEstimate,
    sample_a: SampleA,
    sample_b: SampleB,
    theta: Theta,
    xi: Xi,
    level: float = 0.95,
) -> IntervalEstimate:
    """Components, plug-in variance and Wald interval for one proposed estimator."""
    P = _Plug(sample_a, sample_b, theta, xi)
    comps = estimate_components(estimate.kind, sample_a, sample_b, theta, xi, estimate.value, _plug=P)
    s2 = sigma2_plugin(estimate.kind, comps, sample_a, sample_b, theta, xi, _plug=P)
    return wald_ci(estimate, s2, population_size(sample_b), level)
