"""scikit-learn style front end for the two-sample mean estimators.

``fit`` takes the non-probability sample as ``(X, y)`` and the reference
survey as ``X_reference`` with its design weights.  After fitting, ``mean_``
holds the population-mean estimate, ``se_`` and ``ci_`` its uncertainty, and
``predict`` returns the population regression ``E(y | x)`` implied by the two
fitted models.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .estimators import mu_aipw, mu_el, mu_ipw, mu_naive, mu_reg
from .fitting import el_weights, fit_outcome_mle, fit_theta_calibration, fit_theta_pml
from .model import (
    CovariateSchema,
    DesignInfo,
    Family,
    SampleA,
    SampleB,
    conditional_mean,
    participation_prob,
    pi_marginal,
)
from .variance import interval_for

_WITH_SE = ("IPW", "REG", "AIPW")
_SUPPORTED = _WITH_SE + ("NAIVE", "EL")


class NonignorableMeanEstimator(BaseEstimator):
    """Population mean of ``y`` under a participation model that depends on ``y``.

    Parameters
    ----------
    family : {"bernoulli_logistic", "gaussian_linear"}
        Outcome model fitted on the non-probability sample.
    instruments : sequence of int or str
        Columns that enter the outcome model only.  Strings are matched
        against the column names of a DataFrame ``X``.
    estimator : {"AIPW", "IPW", "REG", "NAIVE", "EL"}
        Which estimate ``mean_`` reports.
    level : float
        Confidence level of ``ci_``.
    tol, max_iter :
        Convergence controls of the pseudo-likelihood fit.
    n_starts, random_state :
        Multistart settings, used only by ``estimator="EL"``.
    allow_no_instrument : bool
        Fit even when ``instruments`` is empty (gamma is then weakly identified).
    """

    def __init__(
        self,
        family="bernoulli_logistic",
        instruments=(),
        estimator="AIPW",
        level=0.95,
        tol=1e-6,
        max_iter=500,
        n_starts=20,
        random_state=0,
        allow_no_instrument=False,
    ):
        self.family = family
        self.instruments = instruments
        self.estimator = estimator
        self.level = level
        self.tol = tol
        self.max_iter = max_iter
        self.n_starts = n_starts
        self.random_state = random_state
        self.allow_no_instrument = allow_no_instrument

    def _schema(self, X_raw, p):
        columns = getattr(X_raw, "columns", None)
        names = [str(c) for c in columns] if columns is not None else [f"x{j}" for j in range(p)]
        chosen = []
        for ins in self.instruments:
            if isinstance(ins, (int, np.integer)):
                if not 0 <= ins < p:
                    raise ValueError(f"instrument index {ins} out of range for {p} columns")
                chosen.append(names[ins])
            elif str(ins) in names:
                chosen.append(str(ins))
            else:
                raise ValueError(f"instrument {ins!r} is not a column of X")
        return CovariateSchema.from_instruments(names, chosen)

    def fit(self, X, y, X_reference, reference_weights, design: Optional[DesignInfo] = None):
        """Fit both models and compute the selected mean estimate.

        ``design`` describes how the reference sample was drawn.  Without it
        the Hajek approximation of the design variance is used.
        """
        kind = str(self.estimator).upper()
        if kind not in _SUPPORTED:
            raise ValueError(f"estimator must be one of {_SUPPORTED}, got {self.estimator!r}")
        family = Family.parse(self.family)
        Xa = check_array(X, dtype=float)
        ya = column_or_1d(np.asarray(y, dtype=float), warn=True)
        Xb = check_array(X_reference, dtype=float)
        d = column_or_1d(np.asarray(reference_weights, dtype=float))
        if Xb.shape[1] != Xa.shape[1]:
            raise ValueError(f"X_reference has {Xb.shape[1]} columns, X has {Xa.shape[1]}")
        if len(ya) != Xa.shape[0] or len(d) != Xb.shape[0]:
            raise ValueError("row counts of X/y or X_reference/reference_weights differ")

        schema = self._schema(X, Xa.shape[1])
        self.schema_ = schema
        self.n_features_in_ = Xa.shape[1]
        if hasattr(X, "columns"):
            self.feature_names_in_ = np.asarray(schema.names, dtype=object)
        A = SampleA(Xa, ya, schema)
        A.check_family(family)
        B = SampleB(Xb, d, schema, design)

        self.xi_ = fit_outcome_mle(A, family).params
        self.theta_ = None
        if kind != "NAIVE":
            self.theta_ = fit_theta_pml(
                self.xi_, A, B, tol=self.tol, max_iter=self.max_iter, allow_no_instrument=self.allow_no_instrument
            ).params

        self.se_ = None
        self.ci_ = None
        if kind == "NAIVE":
            est = mu_naive(A)
        elif kind == "EL":
            cal = fit_theta_calibration(A, B, n_starts=self.n_starts, seed=self.random_state, theta_pl=self.theta_)
            est = mu_el(el_weights(cal.params, self.xi_, A, B), A)
        else:
            est = {"IPW": lambda: mu_ipw(A, self.theta_), "REG": lambda: mu_reg(B, self.theta_, self.xi_),
                   "AIPW": lambda: mu_aipw(A, B, self.theta_, self.xi_)}[kind]()
            ci = interval_for(est, A, B, self.theta_, self.xi_, level=self.level)
            self.se_ = ci.se
            self.ci_ = (ci.ci_low, ci.ci_high)
        self.mean_ = float(est.value)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "xi_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns; the estimator was fitted with {self.n_features_in_}")
        return X

    def _need_theta(self):
        if self.theta_ is None:
            raise AttributeError("the participation model is not fitted when estimator='NAIVE'")

    def predict(self, X):
        """Population regression ``E(y | x)``, a mixture of participant and non-participant laws."""
        X = self._check_X(X)
        self._need_theta()
        return conditional_mean(X[:, self.schema_.shared_idx], X, self.theta_, self.xi_)

    def participation_proba(self, X, y=None):
        """``pr(R = 1 | u, y)`` when ``y`` is given, otherwise ``pr(R = 1 | x)``."""
        X = self._check_X(X)
        self._need_theta()
        U = X[:, self.schema_.shared_idx]
        if y is None:
            return pi_marginal(U, X, self.theta_, self.xi_)
        return participation_prob(U, column_or_1d(np.asarray(y, dtype=float)), self.theta_)
