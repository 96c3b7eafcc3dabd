"""Efficient moment estimation for one-dimensional ergodic diffusions.

Empirical, maximum-likelihood and one-step estimators of ``E F(xi)`` for
``dX = S(X) dt + sigma(X) dW``, their efficiency bounds, and the first-order
Edgeworth expansion of the empirical estimator, with a Monte Carlo harness
that checks them against quadrature oracles.
"""

__version__ = "0.1.0"

from .exceptions import *  # noqa: E402,F401,F403
from .model import (DiffusionModel, ParametricFamily, Path, ScalarField,  # noqa: E402
                    get_family, make_nonlinear_family, make_ou_family, moment_function)
from .invariant import InvariantLaw, build_law, check_ergodicity, stationary_moment  # noqa: E402
from .simulate import SimConfig, simulate_path  # noqa: E402
from .nonparam import NonparamBound, build_bound, empirical_moment  # noqa: E402
from .param import ParamContext, build_context, mle, one_step  # noqa: E402
from .edgeworth import EdgeworthDensity, bracket, skewness_coefficient  # noqa: E402
from .estimators import DriftMLE, EmpiricalMomentEstimator, OneStepMomentEstimator  # noqa: E402

__all__ = [
    "DiffusionModel", "ParametricFamily", "Path", "ScalarField", "get_family",
    "make_nonlinear_family", "make_ou_family", "moment_function",
    "InvariantLaw", "build_law", "check_ergodicity", "stationary_moment",
    "SimConfig", "simulate_path",
    "NonparamBound", "build_bound", "empirical_moment",
    "ParamContext", "build_context", "mle", "one_step",
    "EdgeworthDensity", "bracket", "skewness_coefficient",
    "DriftMLE", "EmpiricalMomentEstimator", "OneStepMomentEstimator",
]
