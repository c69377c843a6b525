"""Monte-Carlo study: finite population, repeated two-sample draws, metrics.

One finite population is generated per setting and held fixed; each
replication draws a Poisson non-probability sample and an SRSWOR reference
sample from it, runs the estimator pipeline and records point estimates,
plug-in standard errors and Wald intervals.

Random streams are derived from ``(seed, role, replication)`` through
:class:`numpy.random.SeedSequence`, so results do not depend on the number of
worker processes.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .estimators import (
    ignorable_baselines,
    mu_aipw,
    mu_el,
    mu_ipw,
    mu_naive,
    mu_reg,
)
from .exceptions import EstimationError, FlooringWarning, IdentifiabilityWarning, PseudoInverseWarning
from .fitting import MULTIPLE, el_weights, fit_outcome_mle, fit_theta_calibration, fit_theta_pml
from .model import (
    CovariateSchema,
    DesignInfo,
    Family,
    SampleA,
    SampleB,
    Theta,
    Xi,
    participation_prob,
)
from .variance import interval_for

logger = logging.getLogger(__name__)

BETA_TRUE = (-0.7, 1.5)
OUTCOME_COEF = (-1.8, 1.2, 1.2, 1.0)
COVARIATES = ("u1", "u2", "z")
SCHEMA = CovariateSchema(COVARIATES, ("shared", "shared", "instrument"))

# (alpha, gamma) -> (E(n_A), mu0)
STUDY_POPULATIONS = {
    (4.5, 0.8): (500, 0.58),
    (2.7, 0.8): (2000, 0.57),
    (5.1, -0.8): (500, 0.34),
    (3.3, -0.8): (2000, 0.35),
}

ROLE_POPULATION = 0
ROLE_SAMPLE_A = 1
ROLE_SAMPLE_B = 2
ROLE_CALIBRATION = 3

PROPOSED = ("REG", "IPW", "AIPW")
ALL_ESTIMATORS = ("NAIVE", "REG2", "IPW2", "DR2", "REG", "IPW", "AIPW", "EL")
THETA_NAMES = ("alpha", "beta1", "beta2", "gamma")


def alpha_for(expected_n_a: int, gamma: float) -> float:
    """Study intercept for a given expected non-probability sample size and gamma."""
    for (a, g), (ena, _) in STUDY_POPULATIONS.items():
        if ena == int(expected_n_a) and g == float(gamma):
            return a
    raise KeyError(f"no study setting for E(n_A)={expected_n_a}, gamma={gamma}")


@dataclass(frozen=True)
class PopulationSpec:
    alpha: float
    gamma: float
    N: int = 20000
    seed: int = 20240501
    beta: tuple = BETA_TRUE
    outcome_coef: tuple = OUTCOME_COEF

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("N must be positive")

    @property
    def theta(self) -> Theta:
        return Theta(self.alpha, np.array(self.beta), self.gamma)

    @property
    def xi(self) -> Xi:
        return Xi(Family.BERNOULLI, np.array(self.outcome_coef))


@dataclass(frozen=True)
class Population:
    X: np.ndarray
    y: np.ndarray
    mu0: float
    pi_true: np.ndarray
    spec: PopulationSpec

    @property
    def N(self) -> int:
        return self.y.size


def _rng(seed: int, role: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(role), int(index)]))


def generate_population(spec: PopulationSpec) -> Population:
    """Finite population from the mixture law of ``y | x``.

    With probability ``pi(x)`` the response comes from ``Bern(c1(x))`` (the law
    among participants), otherwise from ``Bern(c0(x))`` whose logit is shifted
    by gamma.
    """
    rng = _rng(spec.seed, ROLE_POPULATION)
    N = int(spec.N)
    u = rng.standard_normal((N, 2))
    z = rng.uniform(0.0, 3.0, N)
    X = np.column_stack([u, z])
    b0, b1, b2, b3 = spec.outcome_coef
    lin = b0 + b1 * u[:, 0] + b2 * u[:, 1] + b3 * z
    c1 = expit(lin)
    c0 = expit(lin + spec.gamma)
    c = np.logaddexp(0.0, lin + spec.gamma) - np.logaddexp(0.0, lin)
    pi_x = expit(-(spec.alpha + u @ np.asarray(spec.beta) + c))
    from_participant_law = rng.uniform(size=N) < pi_x
    prob_one = np.where(from_participant_law, c1, c0)
    y = (rng.uniform(size=N) < prob_one).astype(float)
    pi_true = participation_prob(u, y, spec.theta)
    return Population(X=X, y=y, mu0=float(y.mean()), pi_true=pi_true, spec=spec)


def draw_poisson_sample(pop: Population, theta_true: Optional[Theta], rng, max_redraws: int = 100):
    """Poisson sample with inclusion probabilities ``pi_A(x_i, y_i; theta)``.

    Returns ``(sample, redraws)``; an empty draw is repeated and counted.
    """
    pi = pop.pi_true if theta_true is None else participation_prob(pop.X[:, SCHEMA.shared_idx], pop.y, theta_true)
    for redraws in range(max_redraws + 1):
        keep = rng.uniform(size=pop.N) < pi
        if keep.any():
            return SampleA(pop.X[keep], pop.y[keep], SCHEMA), redraws
    raise RuntimeError("Poisson sampling produced only empty samples")


def draw_srswor(pop: Population, n_b: int, rng) -> SampleB:
    """Simple random sample without replacement with weights ``N / n_B``."""
    N = pop.N
    if not 1 <= n_b <= N:
        raise ValueError(f"n_B must lie in [1, N], got {n_b}")
    idx = np.arange(N) if n_b == N else np.sort(rng.choice(N, size=n_b, replace=False))
    d = np.full(n_b, N / n_b)
    return SampleB(pop.X[idx], d, SCHEMA, DesignInfo.srswor(n_b, N))


# ---------------------------------------------------------------------------
# study orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    spec: PopulationSpec
    n_b: int
    reps: int = 500
    estimators: tuple = ALL_ESTIMATORS
    level: float = 0.95
    workers: int = 1
    calibration: bool = True
    n_starts: int = 20

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 1 <= self.n_b <= self.spec.N:
            raise ValueError("n_B must lie in [1, N]")
        unknown = set(self.estimators) - set(ALL_ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if not self.calibration and "EL" in self.estimators:
            # EL weights need the calibration fit; without it the estimator is not run
            object.__setattr__(self, "estimators", tuple(k for k in self.estimators if k != "EL"))


@dataclass
class MetricRow:
    n_used: int
    pct_rb: float
    rrmse: float
    sd: float
    se: Optional[float] = None
    cp: Optional[float] = None
    al: Optional[float] = None


@dataclass
class MetricsTable:
    """Aggregated study output; ``excluded`` counts failures per estimator."""

    setting: dict
    mu0: float
    reps: int
    estimators: dict = field(default_factory=dict)
    theta_pl: dict = field(default_factory=dict)
    theta_cal: dict = field(default_factory=dict)
    nmr_cal: Optional[int] = None
    nmr_pl: Optional[int] = None
    excluded: dict = field(default_factory=dict)
    empty_redraws: int = 0
    floored: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(estimates, zeta0: float, ses=None, cis=None) -> MetricRow:
    """Relative bias (%), relative RMSE, SD, mean SE, coverage and mean CI length."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates to summarise")
    if zeta0 == 0:
        raise ValueError("relative metrics are undefined for zeta0 = 0")
    dev = est - zeta0
    pct_rb = float(np.mean(dev / zeta0) * 100.0)
    rrmse = float(np.sqrt(np.mean(dev**2 / zeta0**2)))
    sd = float(np.std(est, ddof=1)) if est.size > 1 else 0.0
    row = MetricRow(n_used=int(est.size), pct_rb=pct_rb, rrmse=rrmse, sd=sd)
    if ses is not None:
        row.se = float(np.mean(np.asarray(ses, dtype=float)))
    if cis is not None:
        cis = np.asarray(cis, dtype=float).reshape(-1, 2)
        row.cp = float(np.mean((cis[:, 0] <= zeta0) & (zeta0 <= cis[:, 1])))
        row.al = float(np.mean(cis[:, 1] - cis[:, 0]))
    return row


def run_replication(pop: Population, config: StudyConfig, index: int) -> dict:
    """One replication; estimator-specific failures are recorded, never raised."""
    seed = config.spec.seed
    sample_a, redraws = draw_poisson_sample(pop, None, _rng(seed, ROLE_SAMPLE_A, index))
    sample_b = draw_srswor(pop, config.n_b, _rng(seed, ROLE_SAMPLE_B, index))
    out = {"index": index, "redraws": redraws, "n_a": sample_a.n, "est": {}, "errors": {}, "floored": 0}
    wanted = set(config.estimators)

    def record_error(kinds, exc):
        for k in kinds:
            if k in wanted:
                out["errors"][k] = type(exc).__name__

    if "NAIVE" in wanted:
        out["est"]["NAIVE"] = (mu_naive(sample_a).value, None, None)

    try:
        xi_hat = fit_outcome_mle(sample_a, Family.BERNOULLI).params
    except EstimationError as exc:
        record_error(wanted - {"NAIVE"}, exc)
        return out

    if wanted & {"REG2", "IPW2", "DR2"}:
        try:
            for est in ignorable_baselines(sample_a, sample_b, xi_hat=xi_hat):
                if est.kind in wanted:
                    out["est"][est.kind] = (est.value, None, None)
        except EstimationError as exc:
            record_error({"REG2", "IPW2", "DR2"}, exc)

    theta_hat = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IdentifiabilityWarning)
            fit = fit_theta_pml(xi_hat, sample_a, sample_b)
        theta_hat = fit.params
        out["theta_pl"] = theta_hat.to_vector().tolist()
    except EstimationError as exc:
        record_error(wanted & set(PROPOSED), exc)
        out["errors"]["theta_pl"] = type(exc).__name__

    if theta_hat is not None:
        point = {
            "IPW": lambda: mu_ipw(sample_a, theta_hat),
            "REG": lambda: mu_reg(sample_b, theta_hat, xi_hat),
            "AIPW": lambda: mu_aipw(sample_a, sample_b, theta_hat, xi_hat),
        }
        for kind in PROPOSED:
            if kind not in wanted:
                continue
            est = point[kind]()
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                ci = interval_for(est, sample_a, sample_b, theta_hat, xi_hat, level=config.level)
            out["floored"] += sum(issubclass(w.category, FlooringWarning) for w in caught)
            out["est"][kind] = (est.value, ci.se, (ci.ci_low, ci.ci_high))

    if config.calibration:
        try:
            cal = fit_theta_calibration(
                sample_a,
                sample_b,
                n_starts=config.n_starts,
                seed=np.random.SeedSequence([seed, ROLE_CALIBRATION, index]),
                theta_pl=theta_hat,
            )
            out["cal_multiple"] = cal.multiplicity == MULTIPLE
            out["theta_cal"] = cal.params.to_vector().tolist()
            if "EL" in wanted:
                if cal.multiplicity == MULTIPLE:
                    out["errors"]["EL"] = "MultipleRoots"
                else:
                    w = el_weights(cal.params, xi_hat, sample_a, sample_b)
                    out["est"]["EL"] = (mu_el(w, sample_a).value, None, None)
        except EstimationError as exc:
            out["errors"]["theta_cal"] = type(exc).__name__
            record_error({"EL"} & wanted, exc)
    return out


def _worker(args):
    pop, config, indices = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PseudoInverseWarning)
        return [run_replication(pop, config, i) for i in indices]


def _resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get("NPSURVEY_THREADS", "1"))
    return max(1, int(workers))


def run_replications(config: StudyConfig, pop: Optional[Population] = None) -> tuple:
    """Run all replications; returns ``(population, per-replication records)`` in index order."""
    pop = generate_population(config.spec) if pop is None else pop
    workers = _resolve_workers(config.workers)
    indices = list(range(config.reps))
    if workers == 1:
        records = _worker((pop, config, indices))
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_worker, [(pop, config, c) for c in chunks]))
        records = sorted((r for part in parts for r in part), key=lambda r: r["index"])
    return pop, records


def summarize(pop: Population, config: StudyConfig, records: Sequence[dict]) -> MetricsTable:
    spec = config.spec
    table = MetricsTable(
        setting={
            "alpha": spec.alpha,
            "gamma": spec.gamma,
            "N": spec.N,
            "n_b": config.n_b,
            "reps": config.reps,
            "seed": spec.seed,
            "level": config.level,
        },
        mu0=pop.mu0,
        reps=config.reps,
    )
    table.empty_redraws = int(sum(r["redraws"] for r in records))
    table.floored = int(sum(r["floored"] for r in records))
    for kind in ALL_ESTIMATORS:
        if kind not in config.estimators:
            continue
        rows = [r["est"][kind] for r in records if kind in r["est"]]
        table.excluded[kind] = config.reps - len(rows)
        if not rows:
            continue
        values = [v for v, _, _ in rows]
        if kind in PROPOSED:
            ses = [s for _, s, _ in rows]
            cis = [ci for _, _, ci in rows]
            table.estimators[kind] = asdict(compute_metrics(values, pop.mu0, ses, cis))
        else:
            table.estimators[kind] = asdict(compute_metrics(values, pop.mu0))

    truth = spec.theta.to_vector()
    pl = np.array([r["theta_pl"] for r in records if "theta_pl" in r])
    table.nmr_pl = int(len(pl))
    table.excluded["theta_pl"] = config.reps - len(pl)
    if len(pl):
        table.theta_pl = {
            name: asdict(compute_metrics(pl[:, j], truth[j])) for j, name in enumerate(THETA_NAMES)
        }
    if config.calibration:
        cal = np.array([r["theta_cal"] for r in records if "theta_cal" in r and not r.get("cal_multiple")])
        table.nmr_cal = int(len(cal))
        table.excluded["theta_cal"] = config.reps - len(cal)
        if len(cal):
            table.theta_cal = {
                name: asdict(compute_metrics(cal[:, j], truth[j])) for j, name in enumerate(THETA_NAMES)
            }
    return table


def run_study(config: StudyConfig) -> MetricsTable:
    pop, records = run_replications(config)
    return summarize(pop, config, records)
