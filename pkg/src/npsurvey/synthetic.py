"""Synthetic two-sample dataset with the layout of a mood-survey application.

Ten covariate columns: three age-group dummies (``x11``, ``x12``, ``x13``;
ages 18-29 are the reference group), six binary attitudes ``x2`` ... ``x7``
and a binary self-rated health indicator ``x8`` that enters the outcome
model only and so serves as the instrument.  The response is a binary mood
indicator.

A finite population is drawn from the same mixture law as the simulation
study, a Poisson non-probability sample is taken with the nonignorable
propensity, and the reference sample is SRSWOR.  The true population mean is
returned with the samples, so analyses of the fixture can be checked against
it.

Run ``python -m npsurvey.synthetic <directory>`` to write the CSV files, a
ready-to-use analysis config and the truth.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .io import write_sample_a, write_sample_b
from .model import CovariateSchema, DesignInfo, SampleA, SampleB

NAMES = ("x11", "x12", "x13", "x2", "x3", "x4", "x5", "x6", "x7", "x8")
ROLES = {n: ("instrument" if n == "x8" else "shared") for n in NAMES}
SCHEMA = CovariateSchema(NAMES, tuple(ROLES[n] for n in NAMES))

AGE_PROBS = (0.182, 0.330, 0.413, 0.075)
BINARY_PROBS = (0.603, 0.516, 0.335, 0.592, 0.167, 0.308, 0.778)
BETA = (-0.728, -1.498, -2.522, -1.380, -0.131, 0.313, -0.139, 0.119, -0.257)
GAMMA = -0.538
XI = (-2.349, 0.101, 0.384, 0.660, -0.037, -0.478, 0.556, 0.577, 0.837, -0.461, 1.748)


@dataclass(frozen=True)
class Fixture:
    sample_a: SampleA
    sample_b: SampleB
    mu0: float
    alpha: float
    N: int


def _covariates(rng, N):
    age = rng.choice(4, size=N, p=AGE_PROBS)
    dummies = np.column_stack([(age == k).astype(float) for k in (1, 2, 3)])
    binaries = (rng.uniform(size=(N, len(BINARY_PROBS))) < np.array(BINARY_PROBS)).astype(float)
    return np.column_stack([dummies, binaries])


def make_fixture(seed: int = 2024, N: int = 40000, expected_n_a: int = 600, n_b: int = 900) -> Fixture:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    X = _covariates(rng, N)
    U = X[:, :9]
    lin = XI[0] + X @ np.array(XI[1:])
    c = np.logaddexp(0.0, lin + GAMMA) - np.logaddexp(0.0, lin)
    beta = np.array(BETA)

    # intercept giving the requested expected size of the non-probability sample
    def excess(alpha):
        return expit(-(alpha + U @ beta + c)).sum() - expected_n_a

    alpha = float(brentq(excess, -20.0, 30.0, xtol=1e-12))
    pi_x = expit(-(alpha + U @ beta + c))
    participant_law = rng.uniform(size=N) < pi_x
    p_one = np.where(participant_law, expit(lin), expit(lin + GAMMA))
    y = (rng.uniform(size=N) < p_one).astype(float)

    pi_a = expit(-(alpha + U @ beta + GAMMA * y))
    keep = rng.uniform(size=N) < pi_a
    idx_b = np.sort(rng.choice(N, size=n_b, replace=False))
    A = SampleA(X[keep], y[keep], SCHEMA)
    B = SampleB(X[idx_b], np.full(n_b, N / n_b), SCHEMA, DesignInfo.srswor(n_b, N))
    return Fixture(A, B, float(y.mean()), alpha, N)


def analysis_config(fixture: Fixture) -> dict:
    return {
        "family": "bernoulli_logistic",
        "covariates": ROLES,
        "estimators": ["NAIVE", "IPW", "REG", "AIPW"],
        "level": 0.95,
        "design": {"kind": "srswor", "N": fixture.N, "n": fixture.sample_b.n},
        "seed": 0,
    }


def write_fixture(directory, fixture: Fixture) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_sample_a(out / "sample_a.csv", fixture.sample_a)
    write_sample_b(out / "sample_b.csv", fixture.sample_b)
    (out / "config.json").write_text(json.dumps(analysis_config(fixture), indent=2) + "\n")
    truth = {
        "mu0": fixture.mu0,
        "N": fixture.N,
        "alpha": fixture.alpha,
        "beta": dict(zip(NAMES[:9], BETA)),
        "gamma": GAMMA,
        "xi": dict(zip(("intercept", *NAMES), XI)),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: python -m npsurvey.synthetic <directory>")
    write_fixture(sys.argv[1], make_fixture())
