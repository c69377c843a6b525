"""Point estimators of the finite-population mean."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DomainError
from .fitting import ELWeights, fit_ignorable, fit_outcome_mle
from .model import (
    Family,
    SampleA,
    SampleB,
    Theta,
    Xi,
    conditional_mean,
    outcome_mean,
    participation_prob,
)

KINDS = ("NAIVE", "IPW", "REG", "AIPW", "EL", "REG2", "IPW2", "DR2")


@dataclass(frozen=True)
class MeanEstimate:
    kind: str
    value: float
    n_hat_a: Optional[float] = None
    n_hat_b: Optional[float] = None


def hajek_mean(y, pi) -> tuple:
    """Ratio-normalised inverse-probability mean; returns ``(mean, sum of weights)``."""
    w = 1.0 / np.asarray(pi, dtype=float)
    n_hat = float(w.sum())
    return float(w @ np.asarray(y, dtype=float) / n_hat), n_hat


def aipw_combine(y_a, pi_a, m_a, d_b, m_b) -> tuple:
    """Hajek-normalised residual correction on S_A plus the weighted S_B prediction mean."""
    resid, n_hat_a = hajek_mean(np.asarray(y_a) - np.asarray(m_a), pi_a)
    d_b = np.asarray(d_b, dtype=float)
    n_hat_b = float(d_b.sum())
    return resid + float(d_b @ np.asarray(m_b, dtype=float)) / n_hat_b, n_hat_a, n_hat_b


def mu_naive(sample_a: SampleA) -> MeanEstimate:
    if sample_a.n < 1:
        raise DomainError("naive mean of an empty sample")
    return MeanEstimate("NAIVE", float(sample_a.y.mean()))


def mu_ipw(sample_a: SampleA, theta: Theta) -> MeanEstimate:
    pi = participation_prob(sample_a.U, sample_a.y, theta)
    value, n_hat_a = hajek_mean(sample_a.y, pi)
    return MeanEstimate("IPW", value, n_hat_a=n_hat_a)


def mu_reg(sample_b: SampleB, theta: Theta, xi: Xi) -> MeanEstimate:
    m = conditional_mean(sample_b.U, sample_b.X, theta, xi)
    n_hat_b = sample_b.N_hat
    return MeanEstimate("REG", float(sample_b.d @ m) / n_hat_b, n_hat_b=n_hat_b)


def mu_aipw(sample_a: SampleA, sample_b: SampleB, theta: Theta, xi: Xi) -> MeanEstimate:
    pi_a = participation_prob(sample_a.U, sample_a.y, theta)
    m_a = conditional_mean(sample_a.U, sample_a.X, theta, xi)
    m_b = conditional_mean(sample_b.U, sample_b.X, theta, xi)
    value, n_hat_a, n_hat_b = aipw_combine(sample_a.y, pi_a, m_a, sample_b.d, m_b)
    return MeanEstimate("AIPW", value, n_hat_a=n_hat_a, n_hat_b=n_hat_b)


def mu_el(weights: ELWeights, sample_a: SampleA) -> MeanEstimate:
    return MeanEstimate("EL", float(np.asarray(weights.p) @ sample_a.y))


def ignorable_baselines(sample_a: SampleA, sample_b: SampleB, xi_hat: Optional[Xi] = None, family=Family.BERNOULLI):
    """REG2, IPW2 and DR2: the same three constructions under an ignorable mechanism.

    The propensity is the pseudo-likelihood fit with gamma fixed at zero and the
    prediction model is the outcome regression fitted on S_A without any
    selection correction.
    """
    if xi_hat is None:
        xi_hat = fit_outcome_mle(sample_a, family).params
    theta0 = fit_ignorable(sample_a, sample_b)
    pi_a = participation_prob(sample_a.U, sample_a.y, theta0)
    m_a = outcome_mean(sample_a.X, xi_hat)
    m_b = outcome_mean(sample_b.X, xi_hat)
    n_hat_b = sample_b.N_hat
    reg = MeanEstimate("REG2", float(sample_b.d @ m_b) / n_hat_b, n_hat_b=n_hat_b)
    ipw_value, n_hat_a = hajek_mean(sample_a.y, pi_a)
    ipw = MeanEstimate("IPW2", ipw_value, n_hat_a=n_hat_a)
    dr_value, _, _ = aipw_combine(sample_a.y, pi_a, m_a, sample_b.d, m_b)
    dr = MeanEstimate("DR2", dr_value, n_hat_a=n_hat_a, n_hat_b=n_hat_b)
    return reg, ipw, dr
