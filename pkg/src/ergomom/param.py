"""Parametric drift families: moment map, likelihood, MLE and one-step estimators.

For a family ``S(gamma, x)`` the moment map is ``theta(gamma) = E_gamma F(xi)``.
Its derivative has the covariance form

    theta_dot = 2 (E[F A] - E[F] E[A]),   A(x) = int_0^x S_dot / sigma^2,

and the Fisher information is ``I(gamma) = E[(S_dot / sigma)^2]``.  The
one-step estimator corrects a moment-matching preliminary ``gamma*`` with the
smooth score

    Delta_T(gamma) = T^{-1/2} int (S_dot sigma' sigma - S_dot S - S_dot' sigma^2 / 2) / sigma^2 dt,

which contains no stochastic integral.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .exceptions import DerivativeMismatch
from .invariant import InvariantLaw, build_law, stationary_moment
from .model import ParametricFamily, ScalarField, get_family, moment_function
from .nonparam import empirical_moment
from .quadrature import uniform_grid
from .simulate import _values, time_integral

log = logging.getLogger(__name__)

__all__ = [
    "ParamContext",
    "build_context",
    "get_context",
    "law_at",
    "theta_dot",
    "theta_dot_at",
    "gamma_of_theta",
    "fisher_info",
    "log_likelihood_ratio",
    "mle",
    "MLEResult",
    "delta_T",
    "delta_bar_T",
    "score_potential",
    "one_step",
    "OneStepResult",
    "one_step_batch",
    "one_step_distribution_function",
]

N_TAB = 256
FD_STEP = 1e-4
FD_RTOL = 1e-4
BISECT_TOL = 1e-10
CLAMP_MARGIN = 1e-6
MLE_GRID = 64
MLE_TOL = 1e-8
BOUNDARY_TOL = 1e-4


def law_at(family: ParametricFamily, gamma: float, F: ScalarField | None = None) -> InvariantLaw:
    fields = () if F is None else (F,)
    bps = () if F is None else F.breakpoints
    return build_law(family.model(gamma), fields=fields, breakpoints=bps, check=False)


def _moment_quantities(family, gamma, F):
    """``(theta, theta_dot, info)`` at ``gamma`` by quadrature on one law."""
    law = law_at(family, gamma, F)
    grid = law.grid
    Fv = grid.evaluate(F, one_sided=True)
    sd = np.asarray(family.S_dot(gamma, grid.nodes), dtype=float)
    sig = law.sigma_nodes
    A = grid.running_from(sd / sig**2, 0.0)
    EF = law.expect(Fv)
    EA = law.expect(A)
    # covariance form: center F first so the product is free of cancellation
    tdot = 2.0 * law.expect((Fv - EF) * (A - EA))
    info = law.expect((sd / sig) ** 2)
    return EF, tdot, info


@dataclass(frozen=True, eq=False)
class ParamContext:
    """Tabulated moment map of ``(family, F)`` over a log-spaced gamma grid."""

    family: ParametricFamily
    F: ScalarField
    gammas: np.ndarray
    thetas: np.ndarray
    theta_dots: np.ndarray
    infos: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    _theta: CubicHermiteSpline = field(default=None, repr=False)
    _theta_dot: CubicSpline = field(default=None, repr=False)
    _info: CubicSpline = field(default=None, repr=False)

    @property
    def gamma_range(self):
        return self.family.gamma_range

    @property
    def identifiable(self) -> bool:
        return self.diagnostics["identifiable"]

    def theta_of(self, gamma):
        return self._eval(self._theta, gamma)

    def theta_dot_of(self, gamma):
        return self._eval(self._theta_dot, gamma)

    def info_of(self, gamma):
        return self._eval(self._info, gamma)

    def gamma_of(self, theta):
        return gamma_of_theta(self, theta)

    def _eval(self, spline, gamma):
        g = np.asarray(gamma, dtype=float)
        out = spline(np.log(np.clip(g, *self.gammas[[0, -1]])))
        return float(out) if out.ndim == 0 else out


def build_context(family, F, n: int = N_TAB) -> ParamContext:
    """Tabulate ``theta``, ``theta_dot`` and ``I`` on ``n`` log-spaced points of
    the closed parameter interval.

    ``theta`` is a cubic Hermite spline in ``log gamma`` using the exact
    derivatives, so it is monotone wherever ``theta_dot`` keeps its sign.
    """
    family = get_family(family)
    F = moment_function(F)
    a, b = family.gamma_range
    gammas = np.geomspace(a, b, n)
    rows = np.array([_moment_quantities(family, g, F) for g in gammas])
    thetas, tdots, infos = rows.T
    u = np.log(gammas)
    scale = max(np.max(np.abs(thetas)), 1e-300)
    eps_dot = float(np.min(np.abs(tdots)))
    same_sign = bool(np.all(tdots > 0) or np.all(tdots < 0))
    diagnostics = {
        "eps_dot": eps_dot,
        "eps_info": float(np.min(infos)),
        "identifiable": bool(same_sign and eps_dot > 1e-8 * scale),
        "monotone": bool(np.all(np.diff(thetas) > 0) or np.all(np.diff(thetas) < 0)),
    }
    if not diagnostics["identifiable"]:
        log.warning("theta_dot is not separated from zero for %s on %s", F.name, family.name)
    return ParamContext(
        family, F, gammas, thetas, tdots, infos, diagnostics,
        _theta=CubicHermiteSpline(u, thetas, tdots * gammas),
        _theta_dot=CubicSpline(u, tdots),
        _info=CubicSpline(u, infos),
    )


@lru_cache(maxsize=32)
def _cached_context(family_name, F_name):
    return build_context(family_name, F_name)


def get_context(family, F) -> ParamContext:
    """Context for registered names, built once per process."""
    if isinstance(family, str) and isinstance(F, str):
        return _cached_context(family.lower(), F.strip().lower())
    return build_context(family, F)


def theta_dot_at(family, F, gamma: float) -> float:
    """Covariance-form ``theta_dot`` by direct quadrature at ``gamma``."""
    return _moment_quantities(get_family(family), float(gamma), moment_function(F))[1]


def theta_dot(ctx: ParamContext, gamma: float, check: bool = True) -> float:
    """``theta_dot(gamma)`` by quadrature, cross-checked against a central
    difference of the moment map with step ``1e-4``."""
    family, F = ctx.family, ctx.F
    value = theta_dot_at(family, F, gamma)
    if check:
        h = FD_STEP
        up = stationary_moment(law_at(family, gamma + h, F), F)
        dn = stationary_moment(law_at(family, gamma - h, F), F)
        fd = (up - dn) / (2 * h)
        if abs(fd - value) > FD_RTOL * abs(value) + 1e-9:
            raise DerivativeMismatch(
                f"theta_dot {value:.10g} disagrees with finite difference {fd:.10g}")
    return value


def fisher_info(ctx: ParamContext, gamma: float) -> float:
    """``I(gamma) = E[(S_dot/sigma)^2]`` by quadrature."""
    return _moment_quantities(ctx.family, float(gamma), ctx.F)[2]


def gamma_of_theta(ctx: ParamContext, theta, return_flag: bool = False):
    """Invert the tabulated moment map by bisection.

    Values outside the attainable range are clamped to the nearest end of the
    parameter interval, moved inward by ``1e-6 * |Gamma|``, and flagged.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    a, b = ctx.gammas[0], ctx.gammas[-1]
    margin = CLAMP_MARGIN * (b - a)
    lo_g, hi_g = a + margin, b - margin
    if not ctx.identifiable:
        g = np.full(th.shape, 0.5 * (a + b))
        flag = np.ones(th.shape, dtype=bool)
    else:
        increasing = ctx.thetas[-1] > ctx.thetas[0]
        t_lo, t_hi = ctx.theta_of(lo_g), ctx.theta_of(hi_g)
        tmin, tmax = min(t_lo, t_hi), max(t_lo, t_hi)
        below, above = th < tmin, th > tmax
        flag = below | above
        left = np.full(th.shape, lo_g)
        right = np.full(th.shape, hi_g)
        target = np.clip(th, tmin, tmax)
        # bisection in log gamma keeps the relative resolution uniform
        ul, ur = np.log(left), np.log(right)
        while np.max(np.exp(ur) - np.exp(ul)) > BISECT_TOL:
            um = 0.5 * (ul + ur)
            vm = ctx._theta(um)
            go_right = (vm < target) if increasing else (vm > target)
            ul = np.where(go_right, um, ul)
            ur = np.where(go_right, ur, um)
        g = np.exp(0.5 * (ul + ur))
        # clamp to the end whose theta is nearest
        g = np.where(below, lo_g if t_lo == tmin else hi_g, g)
        g = np.where(above, hi_g if t_hi == tmax else lo_g, g)
    if np.ndim(theta) == 0:
        g, flag = float(g[0]), bool(flag[0])
    if return_flag:
        return g, flag
    return g


# --- likelihood ----------------------------------------------------------------

def log_likelihood_ratio(path, family, gamma: float, gamma1: float, dt=None) -> float:
    """``log dP_gamma / dP_gamma1`` on the observed path.

    ``int (S_g - S_g1)/sigma^2 dX`` uses left points and raw increments;
    ``int (S_g^2 - S_g1^2)/sigma^2 dt`` uses the trapezoid rule.
    """
    v, dt = _values(path, dt)
    family = get_family(family)
    s2 = family.sigma(v) ** 2
    d = family.S(gamma, v) - family.S(gamma1, v)
    e = family.S(gamma, v) ** 2 - family.S(gamma1, v) ** 2
    stoch = np.sum(d[..., :-1] / s2[..., :-1] * np.diff(v, axis=-1), axis=-1)
    quad = e / s2
    trap = dt * (np.sum(quad, axis=-1) - 0.5 * (quad[..., 0] + quad[..., -1]))
    return stoch - 0.5 * trap


@dataclass(frozen=True)
class MLEResult:
    gamma: float
    boundary: bool
    value: float


def _golden(fun, a, b, tol=MLE_TOL):
    """Maximize a unimodal ``fun`` on ``[a, b]`` by golden-section search."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def mle(path, family, F=None, dt=None) -> MLEResult:
    """Maximize the likelihood ratio against the midpoint of the parameter
    interval: coarse grid of 64 points, then golden-section refinement.

    ``F`` is accepted for signature symmetry with the moment estimators and is
    not used.
    """
    family = get_family(family)
    v, dt = _values(path, dt)
    a, b = family.gamma_range
    g1 = 0.5 * (a + b)
    grid = np.linspace(a, b, MLE_GRID + 2)[1:-1]
    ll = np.array([log_likelihood_ratio(v, family, g, g1, dt) for g in grid])
    k = int(np.argmax(ll))
    lo = grid[k - 1] if k > 0 else a
    hi = grid[k + 1] if k < grid.size - 1 else b
    g, val = _golden(lambda g: log_likelihood_ratio(v, family, g, g1, dt), lo, hi)
    boundary = (g - a < BOUNDARY_TOL) or (b - g < BOUNDARY_TOL)
    return MLEResult(float(g), bool(boundary), float(val))


# --- smooth score ----------------------------------------------------------------

def _score_integrand(family, gamma, x):
    sd = family.S_dot(gamma, x)
    sdp = family.S_dot_prime(gamma, x)
    sig = family.sigma(x)
    sp = family.sigma_prime(x)
    return (sd * sp * sig - sd * family.S(gamma, x) - 0.5 * sdp * sig**2) / sig**2


def delta_T(path, family, gamma: float, dt=None):
    """Smooth score: an ordinary time integral along the path, over ``sqrt(T)``."""
    v, dt = _values(path, dt)
    family = get_family(family)
    T = (v.shape[-1] - 1) * dt
    return time_integral(v, lambda x: _score_integrand(family, gamma, x), dt) / np.sqrt(T)


def delta_bar_T(path, family, gamma: float, dt=None):
    """Score written with a stochastic integral,
    ``T^{-1/2} (int S_dot/sigma^2 dX - int S_dot S/sigma^2 dt)``.

    Left-point sums for both integrals; used to check :func:`delta_T`.
    """
    v, dt = _values(path, dt)
    family = get_family(family)
    T = (v.shape[-1] - 1) * dt
    x = v[..., :-1]
    w = family.S_dot(gamma, x) / family.sigma(x) ** 2
    val = np.sum(w * np.diff(v, axis=-1), axis=-1) \
        - dt * np.sum(w * family.S(gamma, x), axis=-1)
    return val / np.sqrt(T)


def score_potential(family, gamma: float, x):
    """``p(x) = int_0^x S_dot(gamma, v) / sigma(v)^2 dv``."""
    family = get_family(family)
    x = np.asarray(x, dtype=float)
    reach = float(np.max(np.abs(x))) if x.size else 0.0
    L = max(1.0, reach * (1 + 1e-9))
    grid = uniform_grid(-L, L, 2 * max(8, int(np.ceil(L))))
    vals = family.S_dot(gamma, grid.nodes) / family.sigma(grid.nodes) ** 2
    return grid.interpolate(grid.running_from(vals, 0.0), x)


# --- one-step estimators ---------------------------------------------------------

@dataclass(frozen=True)
class OneStepResult:
    theta_star: float
    gamma_star: float
    gamma_tilde: float
    theta_tilde: float
    delta: float
    clamped: bool

    @property
    def flags(self):
        return ["Clamped"] if self.clamped else []

    def as_dict(self) -> dict:
        return {"theta_star": self.theta_star, "gamma_star": self.gamma_star,
                "gamma_tilde": self.gamma_tilde, "theta_tilde": self.theta_tilde,
                "delta_T": self.delta, "flags": self.flags}


def one_step(path, ctx: ParamContext, dt=None) -> OneStepResult:
    """Moment-matching ``gamma*`` followed by one score correction.

    ``gamma~ = gamma* + Delta_T(gamma*) / (I(gamma*) sqrt(T))`` and
    ``theta~ = theta* + theta_dot(gamma*) Delta_T(gamma*) / (I(gamma*) sqrt(T))``.
    """
    v, dt = _values(path, dt)
    T = (v.shape[-1] - 1) * dt
    th_star = float(empirical_moment(v, ctx.F, dt))
    g_star, clamped = gamma_of_theta(ctx, th_star, return_flag=True)
    d = float(delta_T(v, ctx.family, g_star, dt))
    step = d / (ctx.info_of(g_star) * np.sqrt(T))
    return OneStepResult(th_star, g_star, float(g_star + step),
                         float(th_star + ctx.theta_dot_of(g_star) * step), d, clamped)


def one_step_batch(values, ctx: ParamContext, dt: float) -> dict:
    """:func:`one_step` for a ``(R, N + 1)`` batch; returns arrays keyed like
    :meth:`OneStepResult.as_dict` plus a boolean ``clamped``."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    T = (v.shape[-1] - 1) * dt
    th = np.asarray(empirical_moment(v, ctx.F, dt), dtype=float)
    g, clamped = gamma_of_theta(ctx, th, return_flag=True)
    family = ctx.family
    gc = np.asarray(g)[:, None]
    d = time_integral(v, lambda x: _score_integrand(family, gc, x), dt) / np.sqrt(T)
    step = d / (ctx.info_of(g) * np.sqrt(T))
    return {"theta_star": th, "gamma_star": np.asarray(g), "gamma_tilde": g + step,
            "theta_tilde": th + ctx.theta_dot_of(g) * step, "delta_T": d,
            "clamped": np.asarray(clamped)}


def one_step_distribution_function(path, ctx: ParamContext, x: float, dt=None) -> dict:
    """Corrected estimate of the invariant CDF at ``x``.

    ``ctx`` must be built for ``indicator(x)``.  When the CDF at ``x`` does not
    depend on gamma (``theta_dot`` not separated from zero) the correction is
    zero and the result is flagged ``NonIdentifiableAt``.
    """
    if ctx.F.breakpoints != (float(x),):
        raise ValueError(f"context is for {ctx.F.name}, not indicator({x:g})")
    r = one_step(path, ctx, dt)
    flags = list(r.flags)
    D_tilde = r.theta_tilde
    if not ctx.identifiable:
        flags = [f for f in flags if f != "Clamped"] + [f"NonIdentifiableAt({x:g})"]
        D_tilde = r.theta_star
    return {"x": float(x), "D_hat": r.theta_star, "D_tilde": D_tilde,
            "gamma_star": r.gamma_star, "flags": flags}
