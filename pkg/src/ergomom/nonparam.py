"""Empirical moment estimator and its nonparametric efficiency bound.

With ``q = F - theta`` and ``f`` the invariant density,

* ``M(x) = int_{-inf}^x q f``,
* ``Q(x) = 2 M(x) / (sigma(x) f(x))`` (influence function),
* ``H(x) = int_0^x 2 M / (sigma^2 f)``, so ``L H = q`` for the generator L,
* ``avar = E[Q(xi)^2]`` and ``info = 1 / avar``.

``sqrt(T) (theta*_T - theta)`` then equals
``(H(X_T) - H(X_0)) / sqrt(T) - T^{-1/2} int Q dW`` pathwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MomentConditionViolated, QuadratureFailure, TailDivergence
from .invariant import InvariantLaw, build_law
from .model import DiffusionModel, ScalarField, moment_function
from .simulate import _values, ito_integral, time_integral

__all__ = [
    "NonparamBound",
    "empirical_moment",
    "build_bound",
    "ito_decomposition_check",
    "signed_ratio",
]

MOMENT_POWER = 4


def empirical_moment(path, F, dt=None):
    """``(1/T) int_0^T F(X_t) dt`` (row-wise for 2-D value arrays)."""
    v, dt = _values(path, dt)
    T = (v.shape[-1] - 1) * dt
    return time_integral(v, moment_function(F), dt) / T


def signed_ratio(num, log_den):
    """``num / exp(log_den)`` without overflow; zero where ``num`` is zero."""
    num = np.asarray(num, dtype=float)
    out = np.zeros_like(num)
    nz = num != 0
    with np.errstate(over="ignore"):
        out[nz] = np.sign(num[nz]) * np.exp(np.log(np.abs(num[nz])) - log_den[nz])
    return out


@dataclass(frozen=True, eq=False)
class NonparamBound:
    """Efficiency-bound objects for estimating ``E F(xi)``; node arrays live on
    ``law.grid``."""

    law: InvariantLaw
    F: ScalarField
    theta: float
    M_nodes: np.ndarray
    Q_nodes: np.ndarray
    H_nodes: np.ndarray
    info: float
    avar: float
    degenerate: bool = False
    moment_checks: tuple = ()

    def M(self, x):
        return self.law.grid.interpolate(self.M_nodes, x)

    def Q(self, x):
        return self.law.grid.interpolate(self.Q_nodes, x)

    def H(self, x):
        return self.law.grid.interpolate(self.H_nodes, x)

    def q(self, x):
        """Centered moment function ``F - theta`` (identically 0 when degenerate)."""
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.zeros(x.shape) if x.ndim else 0.0
        return self.F(x) - self.theta

    def as_dict(self) -> dict:
        return {"theta": self.theta, "info": self.info, "avar": self.avar,
                "degenerate": self.degenerate, "F": self.F.name, "model": self.law.model.name}


def _certify(law, F):
    law = law.with_breakpoints(F.breakpoints)
    if not max(law.tail_mass(F)) < law.domain.tail_tol:
        law = build_law(law.model, fields=(F,), tail_tol=law.domain.tail_tol,
                        breakpoints=F.breakpoints, check=False,
                        half_width=2 * max(abs(law.grid.lo), law.grid.hi))
    return law


def log_density_nodes(law: InvariantLaw) -> np.ndarray:
    return law.phi - 2.0 * np.log(law.sigma_nodes) - law.log_G


def build_bound(law: InvariantLaw, F, check_moments: bool = True) -> NonparamBound:
    """Tabulate ``M``, ``Q``, ``H`` and the bound ``avar = 1/info``."""
    F = moment_function(F)
    try:
        law = _certify(law, F)
    except (TailDivergence, QuadratureFailure) as exc:
        raise MomentConditionViolated(f"{F.name} is not integrable", ("F",)) from exc
    grid = law.grid
    Fv = grid.evaluate(F, one_sided=True)
    theta = grid.integrate(Fv * law.f)
    q = Fv - theta
    zeros = np.zeros(grid.shape)
    scale = max(grid.integrate(Fv**2 * law.f), 1e-300)
    if grid.integrate(q**2 * law.f) <= 1e-24 * scale:
        return NonparamBound(law, F, theta, zeros, zeros, zeros.copy(), np.inf, 0.0, True)
    M = law.running_mass(q)
    logf = log_density_nodes(law)
    sig = law.sigma_nodes
    Q = signed_ratio(2.0 * M, np.log(sig) + logf)
    Q[(np.abs(M) < 1e-280) & (law.f < 1e-280)] = 0.0
    H = grid.running_from(Q / sig, 0.0)
    avar = grid.integrate(Q**2 * law.f)
    checks = ()
    if check_moments:
        checks = _moment_conditions(law, H, Q)
    return NonparamBound(law, F, theta, M, Q, H, 1.0 / avar, avar, False, checks)


def _moment_conditions(law, H, Q, p=MOMENT_POWER, rel=1e-6):
    """Finite ``E|H|^p`` and ``E|Q/2|^p``, judged by the size of the integrand
    mass in the outermost cells relative to the whole integral."""
    grid = law.grid
    failed = []
    values = {}
    for name, g in (("H", H), ("M/(sigma f)", 0.5 * Q)):
        integrand = np.abs(g) ** p * law.f
        total = grid.integrate(integrand)
        cells = grid.cell_integrals(integrand)
        edge = cells[0] + cells[-1]
        values[name] = total
        if not np.isfinite(total) or edge > rel * max(total, 1e-300):
            failed.append(name)
    if failed:
        raise MomentConditionViolated(
            f"E|.|^{p} appears infinite for {', '.join(failed)}", failed)
    return tuple(sorted(values.items()))


def ito_decomposition_check(path, model: DiffusionModel, bound: NonparamBound, dt=None):
    """Residual of the pathwise identity
    ``sqrt(T)(theta* - theta) = (H(X_T) - H(X_0))/sqrt(T) - T^{-1/2} sum Q dW``.

    Works row-wise for 2-D value arrays.
    """
    v, dt = _values(path, dt)
    T = (v.shape[-1] - 1) * dt
    rt = np.sqrt(T)
    lhs = time_integral(v, bound.q, dt) / rt
    if bound.degenerate:
        rhs = np.zeros(np.shape(lhs))
    else:
        rhs = (bound.H(v[..., -1]) - bound.H(v[..., 0])) / rt \
            - ito_integral(v, model, bound.Q, dt) / rt
    return np.abs(lhs - rhs)
