"""Estimator classes with the fit / transform / get_params convention.

Each estimator is fitted to one observed path (a :class:`~ergomom.model.Path`
or a 1-D array plus ``dt``); ``transform`` maps a batch of paths, one per
row, to estimates.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_path
from .model import get_family, moment_function
from .nonparam import empirical_moment
from .param import get_context, mle, one_step

__all__ = ["EmpiricalMomentEstimator", "OneStepMomentEstimator", "DriftMLE"]


class EmpiricalMomentEstimator(TransformerMixin, BaseEstimator):
    """Time average ``(1/T) int F(X_t) dt``."""

    def __init__(self, moment="x2", dt=None):
        self.moment = moment
        self.dt = dt

    def fit(self, X, y=None):
        v, dt = check_path(X, self.dt, allow_batch=False)
        self.theta_ = float(empirical_moment(v, moment_function(self.moment), dt))
        self.T_ = (v.size - 1) * dt
        return self

    def transform(self, X):
        v, dt = check_path(X, self.dt)
        return np.atleast_1d(empirical_moment(np.atleast_2d(v), self.moment, dt))[:, None]


class OneStepMomentEstimator(TransformerMixin, BaseEstimator):
    """Moment matching within a parametric family followed by one score step.

    Fitted attributes: ``theta_star_``, ``gamma_star_``, ``gamma_tilde_``,
    ``theta_tilde_`` and ``flags_``.  ``transform`` returns the columns
    ``(theta_star, gamma_star, gamma_tilde, theta_tilde)``.
    """

    def __init__(self, family="ou", moment="x2", dt=None):
        self.family = family
        self.moment = moment
        self.dt = dt

    def _context(self):
        return get_context(self.family, self.moment)

    def fit(self, X, y=None):
        v, dt = check_path(X, self.dt, allow_batch=False)
        r = one_step(v, self._context(), dt)
        self.theta_star_ = r.theta_star
        self.gamma_star_ = r.gamma_star
        self.gamma_tilde_ = r.gamma_tilde
        self.theta_tilde_ = r.theta_tilde
        self.flags_ = r.flags
        return self

    def transform(self, X):
        v, dt = check_path(X, self.dt)
        ctx = self._context()
        rows = [one_step(row, ctx, dt) for row in np.atleast_2d(v)]
        return np.array([[r.theta_star, r.gamma_star, r.gamma_tilde, r.theta_tilde]
                         for r in rows])


class DriftMLE(TransformerMixin, BaseEstimator):
    """Maximum-likelihood estimate of the drift parameter."""

    def __init__(self, family="ou", dt=None):
        self.family = family
        self.dt = dt

    def fit(self, X, y=None):
        v, dt = check_path(X, self.dt, allow_batch=False)
        r = mle(v, get_family(self.family), dt=dt)
        self.gamma_ = r.gamma
        self.boundary_ = r.boundary
        return self

    def transform(self, X):
        v, dt = check_path(X, self.dt)
        fam = get_family(self.family)
        return np.array([[mle(row, fam, dt=dt).gamma] for row in np.atleast_2d(v)])

    def predict_drift(self, x):
        """Fitted drift ``S(gamma_, x)``."""
        check_is_fitted(self, "gamma_")
        return get_family(self.family).S(self.gamma_, np.asarray(x, dtype=float))
