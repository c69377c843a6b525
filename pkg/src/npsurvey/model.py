"""Participation and outcome models.

Two parametric pieces are combined here:

* the participation model ``pi_A(x, y) = 1 / (1 + exp(alpha + u'beta + gamma*y))``
  where ``u`` are the *shared* covariates (instrument columns never enter it);
* the outcome model ``f(y | x, R=1; xi)`` fitted on the non-probability sample,
  which is either Bernoulli-logistic or Gaussian-linear on an intercept-augmented
  design of *all* covariates.

The link between them is the cumulant ``c(x; gamma, xi) = log E(exp(gamma*y) | x, R=1)``.
All functions are vectorised over rows: ``U`` is ``(n, p_shared)``, ``X`` is
``(n, p)`` and ``y`` is ``(n,)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .exceptions import DimensionError, DomainError

PROB_EPS = 1e-12

SHARED = "shared"
INSTRUMENT = "instrument"


class Family(str, enum.Enum):
    BERNOULLI = "bernoulli_logistic"
    GAUSSIAN = "gaussian_linear"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "bernoulli": cls.BERNOULLI,
            "binary": cls.BERNOULLI,
            "logistic": cls.BERNOULLI,
            "bernoulli_logistic": cls.BERNOULLI,
            "bernoullilogistic": cls.BERNOULLI,
            "gaussian": cls.GAUSSIAN,
            "normal": cls.GAUSSIAN,
            "gaussian_linear": cls.GAUSSIAN,
            "gaussianlinear": cls.GAUSSIAN,
        }
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown outcome family {value!r}") from None


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate names with a role tag per column."""

    names: tuple
    roles: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        roles = tuple(self.roles)
        if len(names) != len(roles):
            raise DimensionError("one role per covariate column is required")
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate covariate names in {names}")
        for r in roles:
            if r not in (SHARED, INSTRUMENT):
                raise DomainError(f"unknown covariate role {r!r}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "roles", roles)

    @classmethod
    def from_instruments(cls, names: Sequence[str], instruments: Sequence[str] = ()):
        instruments = set(instruments)
        unknown = instruments - set(names)
        if unknown:
            raise DimensionError(f"instrument columns not in schema: {sorted(unknown)}")
        roles = tuple(INSTRUMENT if n in instruments else SHARED for n in names)
        return cls(tuple(names), roles)

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def shared_idx(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r == SHARED], dtype=int)

    @property
    def shared_names(self) -> tuple:
        return tuple(n for n, r in zip(self.names, self.roles) if r == SHARED)

    @property
    def instrument_names(self) -> tuple:
        return tuple(n for n, r in zip(self.names, self.roles) if r == INSTRUMENT)


@dataclass(frozen=True)
class Theta:
    """Participation parameters ``(alpha, beta, gamma)``; beta runs over shared columns."""

    alpha: float
    beta: np.ndarray
    gamma: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "beta", beta)
        if not (np.isfinite(self.alpha) and np.isfinite(self.gamma) and np.all(np.isfinite(beta))):
            raise DomainError("Theta entries must be finite")

    @property
    def dim(self) -> int:
        return self.beta.size + 2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.beta, [self.gamma]])

    @classmethod
    def from_vector(cls, v) -> "Theta":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:-1], v[-1])

    def names(self, shared_names: Sequence[str] = ()) -> list:
        shared_names = list(shared_names) or [f"beta{j + 1}" for j in range(self.beta.size)]
        return ["alpha"] + [f"beta[{n}]" for n in shared_names] + ["gamma"]


@dataclass(frozen=True)
class Xi:
    """Outcome-model parameters; ``coef[0]`` is the intercept."""

    family: Family
    coef: np.ndarray
    sigma2: Optional[float] = None

    def __post_init__(self):
        fam = Family.parse(self.family)
        coef = np.atleast_1d(np.asarray(self.coef, dtype=float)).copy()
        coef.setflags(write=False)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "coef", coef)
        if fam is Family.GAUSSIAN:
            if self.sigma2 is None or not float(self.sigma2) > 0:
                raise DomainError("GaussianLinear requires sigma2 > 0")
            object.__setattr__(self, "sigma2", float(self.sigma2))
        elif self.sigma2 is not None:
            raise DomainError("sigma2 is only defined for GaussianLinear")

    @property
    def dim(self) -> int:
        return self.coef.size + (1 if self.family is Family.GAUSSIAN else 0)

    def to_vector(self) -> np.ndarray:
        if self.family is Family.GAUSSIAN:
            return np.concatenate([self.coef, [self.sigma2]])
        return self.coef.copy()

    @classmethod
    def from_vector(cls, family, v) -> "Xi":
        family = Family.parse(family)
        v = np.asarray(v, dtype=float)
        if family is Family.GAUSSIAN:
            return cls(family, v[:-1], v[-1])
        return cls(family, v)

    def names(self, covariate_names: Sequence[str] = ()) -> list:
        covariate_names = list(covariate_names) or [f"x{j + 1}" for j in range(self.coef.size - 1)]
        out = ["intercept"] + [f"coef[{n}]" for n in covariate_names]
        if self.family is Family.GAUSSIAN:
            out.append("sigma2")
        return out


class DesignKind(str, enum.Enum):
    SRSWOR = "srswor"
    GENERAL_HT = "general_ht"
    HAJEK = "hajek"


@dataclass(frozen=True)
class DesignInfo:
    """Sampling design of the reference sample.

    ``pairwise`` (GeneralHT only) is either an ``(n_B, n_B)`` array of joint
    inclusion probabilities or a callable returning one; its diagonal holds the
    first-order probabilities.
    """

    kind: DesignKind
    N: Optional[int] = None
    n: Optional[int] = None
    pairwise: Optional[Callable | np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        kind = DesignKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.N is not None and int(self.N) < 1:
            raise DomainError("population size N must be positive")
        if kind is DesignKind.SRSWOR:
            if self.N is None or self.n is None:
                raise DomainError("SRSWOR design requires both n and N")
            if not 1 <= int(self.n) <= int(self.N):
                raise DomainError(f"SRSWOR requires 1 <= n <= N, got n={self.n}, N={self.N}")
        if kind is DesignKind.GENERAL_HT and self.pairwise is None:
            raise DomainError("GeneralHT design requires pairwise inclusion probabilities")

    @classmethod
    def srswor(cls, n: int, N: int) -> "DesignInfo":
        return cls(DesignKind.SRSWOR, N=int(N), n=int(n))

    def joint_probabilities(self) -> np.ndarray:
        pij = self.pairwise() if callable(self.pairwise) else self.pairwise
        pij = np.asarray(pij, dtype=float)
        if pij.ndim != 2 or pij.shape[0] != pij.shape[1]:
            raise DimensionError("pairwise inclusion probabilities must be a square matrix")
        if np.any(pij <= 0) or np.any(pij > 1):
            raise DomainError("pairwise inclusion probabilities must lie in (0, 1]")
        return pij


def _as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional")
    return X


@dataclass(frozen=True)
class SampleA:
    """Non-probability sample: covariates and observed responses."""

    X: np.ndarray
    y: np.ndarray
    schema: CovariateSchema

    def __post_init__(self):
        X = _as_matrix(self.X)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] < 1:
            raise DimensionError("sample A must contain at least one unit")
        if X.shape[0] != y.size:
            raise DimensionError(f"sample A has {X.shape[0]} covariate rows but {y.size} responses")
        if X.shape[1] != self.schema.p:
            raise DimensionError(
                f"sample A has {X.shape[1]} columns, schema expects {list(self.schema.names)}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("sample A contains missing or non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def U(self) -> np.ndarray:
        return self.X[:, self.schema.shared_idx]

    def check_family(self, family) -> None:
        check_response(self.y, family)


@dataclass(frozen=True)
class SampleB:
    """Reference probability sample: covariates and survey weights."""

    X: np.ndarray
    d: np.ndarray
    schema: CovariateSchema
    design: Optional[DesignInfo] = None

    def __post_init__(self):
        X = _as_matrix(self.X)
        d = np.asarray(self.d, dtype=float).ravel()
        if X.shape[0] != d.size:
            raise DimensionError(f"sample B has {X.shape[0]} covariate rows but {d.size} weights")
        if X.shape[1] != self.schema.p:
            raise DimensionError(
                f"sample B has {X.shape[1]} columns, schema expects {list(self.schema.names)}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(d))):
            raise DomainError("sample B contains missing or non-finite entries")
        if np.any(d <= 0):
            raise DomainError(f"survey weights must be positive (row {int(np.argmax(d <= 0))})")
        design = self.design if self.design is not None else DesignInfo(DesignKind.HAJEK)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "design", design)

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def N_hat(self) -> float:
        return float(self.d.sum())

    @property
    def U(self) -> np.ndarray:
        return self.X[:, self.schema.shared_idx]


def check_response(y, family) -> None:
    family = Family.parse(family)
    y = np.asarray(y, dtype=float)
    if family is Family.BERNOULLI:
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise DomainError(
                f"binary response required, got y={y[bad[0]]!r} at row {int(bad[0])}"
            )


# ---------------------------------------------------------------------------
# participation model
# ---------------------------------------------------------------------------


def _clamp(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _check_shared(U, theta: Theta) -> np.ndarray:
    U = _as_matrix(U, "U")
    if U.shape[1] != theta.beta.size:
        raise DimensionError(
            f"shared covariate block has {U.shape[1]} columns but beta has {theta.beta.size}"
        )
    return U


def linear_predictor(U, y, theta: Theta) -> np.ndarray:
    """``alpha + u'beta + gamma*y`` for each row."""
    U = _check_shared(U, theta)
    return theta.alpha + U @ theta.beta + theta.gamma * np.asarray(y, dtype=float)


def participation_prob(U, y, theta: Theta) -> np.ndarray:
    """Participation probability ``1/(1+exp(eta))``, clamped to ``[1e-12, 1-1e-12]``."""
    return _clamp(expit(-linear_predictor(U, y, theta)))


# ---------------------------------------------------------------------------
# outcome model and cumulant
# ---------------------------------------------------------------------------


def design_matrix(X) -> np.ndarray:
    """Prepend an intercept column."""
    X = _as_matrix(X)
    return np.column_stack([np.ones(X.shape[0]), X])


def _outcome_eta(X, xi: Xi) -> np.ndarray:
    Xt = design_matrix(X)
    if Xt.shape[1] != xi.coef.size:
        raise DimensionError(
            f"outcome design has {Xt.shape[1]} columns (with intercept) "
            f"but xi has {xi.coef.size} coefficients"
        )
    return Xt @ xi.coef


def outcome_mean(X, xi: Xi) -> np.ndarray:
    """``E(y | x, R=1)`` under the outcome family."""
    eta = _outcome_eta(X, xi)
    if xi.family is Family.BERNOULLI:
        return expit(eta)
    return eta


def cumulant(X, gamma: float, xi: Xi, order: int = 0) -> np.ndarray:
    """``c(x; gamma, xi)`` (order 0) or its first/second gamma-derivative."""
    eta = _outcome_eta(X, xi)
    g = float(gamma)
    if xi.family is Family.BERNOULLI:
        # 1 - p + p e^g = (1 + e^{eta+g}) / (1 + e^eta)
        if order == 0:
            return np.logaddexp(0.0, eta + g) - np.logaddexp(0.0, eta)
        q = expit(eta + g)
        if order == 1:
            return q
        if order == 2:
            return q * (1.0 - q)
    elif xi.family is Family.GAUSSIAN:
        s2 = xi.sigma2
        if order == 0:
            return g * eta + 0.5 * g * g * s2
        if order == 1:
            return eta + g * s2
        if order == 2:
            return np.full_like(eta, s2)
    else:  # pragma: no cover - Family.parse guards this
        raise DomainError(f"unknown family {xi.family!r}")
    raise ValueError(f"order must be 0, 1 or 2, got {order!r}")


def cumulant_grad_xi(X, gamma: float, xi: Xi) -> np.ndarray:
    """Gradient of ``c(x; gamma, xi)`` in xi, shape ``(n, dim xi)``."""
    Xt = design_matrix(X)
    eta = _outcome_eta(X, xi)
    g = float(gamma)
    if xi.family is Family.BERNOULLI:
        return (expit(eta + g) - expit(eta))[:, None] * Xt
    n = Xt.shape[0]
    return np.column_stack([g * Xt, np.full(n, 0.5 * g * g)])


def cumulant_grad_gamma_xi(X, gamma: float, xi: Xi) -> np.ndarray:
    """Mixed derivative ``d/dxi (dc/dgamma)``, shape ``(n, dim xi)``."""
    Xt = design_matrix(X)
    eta = _outcome_eta(X, xi)
    g = float(gamma)
    if xi.family is Family.BERNOULLI:
        q = expit(eta + g)
        return (q * (1.0 - q))[:, None] * Xt
    return np.column_stack([Xt, np.full(Xt.shape[0], g)])


def outcome_loglik(X, y, xi: Xi, order: int = 0):
    """Per-row log f, its xi-score ``(n, q)`` or its xi-Hessian ``(n, q, q)``."""
    Xt = design_matrix(X)
    eta = _outcome_eta(X, xi)
    y = np.asarray(y, dtype=float)
    if xi.family is Family.BERNOULLI:
        if order == 0:
            return y * log_expit(eta) + (1.0 - y) * log_expit(-eta)
        p = expit(eta)
        if order == 1:
            return (y - p)[:, None] * Xt
        if order == 2:
            return -(p * (1.0 - p))[:, None, None] * Xt[:, :, None] * Xt[:, None, :]
    else:
        s2 = xi.sigma2
        r = y - eta
        if order == 0:
            return -0.5 * np.log(2.0 * np.pi * s2) - 0.5 * r * r / s2
        if order == 1:
            return np.column_stack([(r / s2)[:, None] * Xt, -0.5 / s2 + 0.5 * r * r / s2**2])
        if order == 2:
            n, k = Xt.shape
            H = np.empty((n, k + 1, k + 1))
            H[:, :k, :k] = -Xt[:, :, None] * Xt[:, None, :] / s2
            H[:, :k, k] = H[:, k, :k] = -(r / s2**2)[:, None] * Xt
            H[:, k, k] = 0.5 / s2**2 - r * r / s2**3
            return H
    raise ValueError(f"order must be 0, 1 or 2, got {order!r}")


def outcome_density(X, y, xi: Xi) -> np.ndarray:
    return np.exp(outcome_loglik(X, y, xi, 0))


# ---------------------------------------------------------------------------
# marginal propensity and population conditional law
# ---------------------------------------------------------------------------


def marginal_predictor(U, X, theta: Theta, xi: Xi) -> np.ndarray:
    """``alpha + u'beta + c(x; gamma, xi)``."""
    U = _check_shared(U, theta)
    return theta.alpha + U @ theta.beta + cumulant(X, theta.gamma, xi, 0)


def pi_marginal(U, X, theta: Theta, xi: Xi) -> np.ndarray:
    """``pr(R=1 | x)`` implied by both models, clamped like :func:`participation_prob`."""
    return _clamp(expit(-marginal_predictor(U, X, theta, xi)))


def conditional_density(y, U, X, theta: Theta, xi: Xi) -> np.ndarray:
    """Population density/mass ``pr(y | x)`` as a two-component mixture."""
    y = np.asarray(y, dtype=float)
    pi = pi_marginal(U, X, theta, xi)
    f = outcome_density(X, y, xi)
    tilt = np.exp(theta.gamma * y - cumulant(X, theta.gamma, xi, 0))
    return pi * f + (1.0 - pi) * f * tilt


def conditional_mean(U, X, theta: Theta, xi: Xi) -> np.ndarray:
    """Population regression ``E(y | x)``."""
    pi = pi_marginal(U, X, theta, xi)
    return pi * cumulant(X, 0.0, xi, 1) + (1.0 - pi) * cumulant(X, theta.gamma, xi, 1)


def score_vector(U, X, theta: Theta, xi: Xi) -> np.ndarray:
    """Rows ``h = (1, u', dc/dgamma)``; the gradient of the marginal predictor in theta."""
    U = _check_shared(U, theta)
    return np.column_stack([np.ones(U.shape[0]), U, cumulant(X, theta.gamma, xi, 1)])


def conditional_mean_grads(U, X, theta: Theta, xi: Xi):
    """Analytic gradients of :func:`conditional_mean`.

    Returns ``(d m / d theta, d m / d xi)`` with shapes ``(n, dim theta)`` and
    ``(n, dim xi)``.
    """
    pi = pi_marginal(U, X, theta, xi)
    w = pi * (1.0 - pi)
    a = cumulant(X, 0.0, xi, 1)
    b = cumulant(X, theta.gamma, xi, 1)
    h = score_vector(U, X, theta, xi)
    grad_theta = -(w * (a - b))[:, None] * h
    grad_theta[:, -1] += (1.0 - pi) * cumulant(X, theta.gamma, xi, 2)
    grad_xi = (
        -(w * (a - b))[:, None] * cumulant_grad_xi(X, theta.gamma, xi)
        + pi[:, None] * cumulant_grad_gamma_xi(X, 0.0, xi)
        + (1.0 - pi)[:, None] * cumulant_grad_gamma_xi(X, theta.gamma, xi)
    )
    return grad_theta, grad_xi
