"""Scale function, normalizer and invariant law of a 1-D ergodic diffusion.

For ``dX = S(X) dt + sigma(X) dW`` write ``phi(x) = 2 int_0^x S/sigma^2``.
The invariant density is ``f = exp(phi) / (G sigma^2)`` with normalizer
``G = int exp(phi) / sigma^2`` and the scale integrand is ``p = exp(-phi)``,
so that ``G sigma^2 p f = 1`` everywhere.

All integrals over the real line are computed on a certified truncation
domain with the composite Lobatto rule from :mod:`ergomom.quadrature`.
``phi`` is shifted by its maximum before exponentiating; the shift is carried
in ``log_G``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import logsumexp

from .exceptions import (NonPositiveSigma, NotErgodic, OverflowInExponent,
                         QuadratureFailure, TailDivergence)
from .model import DiffusionModel, ScalarField
from .quadrature import Grid, uniform_grid

log = logging.getLogger(__name__)

__all__ = [
    "TruncationDomain",
    "InvariantLaw",
    "ErgodicityReport",
    "check_ergodicity",
    "normalizer",
    "build_law",
    "stationary_moment",
    "sample_stationary",
]

NORMALIZER_TOL = 1e-10
MOMENT_TOL = 1e-9
_MAX_DOUBLINGS = 8
_LAGUERRE = np.polynomial.laguerre.laggauss(12)


@dataclass(frozen=True)
class TruncationDomain:
    lo: float
    hi: float
    tail_tol: float = 1e-12
    tail_lo: float = 0.0
    tail_hi: float = 0.0


@dataclass(frozen=True)
class ErgodicityReport:
    ergodic: bool
    log_V_minus_probe: float
    log_V_minus_one: float
    log_V_plus_one: float
    log_V_plus_probe: float
    log_integrand_zero: float
    log_integrand_minus_probe: float
    log_integrand_plus_probe: float

    def __bool__(self):
        return self.ergodic


def _sigma_values(model, x):
    s = np.asarray(model.sigma(x), dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise NonPositiveSigma(f"sigma must be positive on the domain ({model.name})")
    return s


def _exponent_integrand(model):
    def g(x):
        s = _sigma_values(model, x)
        return 2.0 * np.asarray(model.S(x), dtype=float) / s**2
    return g


def check_ergodicity(model: DiffusionModel, probe_bound: float = 50.0,
                     n_cells: int = 512) -> ErgodicityReport:
    """Numerical proxy for the scale-divergence and finite-speed conditions.

    (a) ``V(x) = int_0^x p`` must grow by more than a factor 10^3 between
    ``+-1`` and ``+-probe_bound``; (b) the normalizer integrand at
    ``+-probe_bound`` must be below 1e-10 times its value at 0.  Everything is
    evaluated in log space, so strongly confining drifts do not overflow.
    """
    if probe_bound <= 1:
        raise ValueError("probe_bound must exceed 1")
    b = float(probe_bound)
    grid = uniform_grid(-b, b, n_cells, anchor=0.0).with_edges([-1.0, 1.0])
    phi = grid.running_from(grid.evaluate(_exponent_integrand(model)), 0.0)
    if not np.all(np.isfinite(phi)):
        raise OverflowInExponent("scale exponent is not finite on the probe interval")
    sig = _sigma_values(model, grid.nodes)
    logw = np.log(grid.weights)
    logp = -phi

    left, right = grid.edges[:-1], grid.edges[1:]

    def log_V(x):
        # log |V(x)|; 0, +-1 and +-b are cell edges
        cells = (left >= 0) & (right <= x) if x > 0 else (right <= 0) & (left >= x)
        return float(logsumexp((logw + logp)[cells]))

    log_int = phi - 2.0 * np.log(sig)
    edge_val = lambda x: float(grid.interpolate(log_int, x))
    lv = [log_V(-b), log_V(-1.0), log_V(1.0), log_V(b)]
    li0, lim, lip = edge_val(0.0), edge_val(-b), edge_val(b)
    scale_ok = (lv[0] - lv[1] > np.log(1e3)) and (lv[3] - lv[2] > np.log(1e3))
    speed_ok = (lim < np.log(1e-10) + li0) and (lip < np.log(1e-10) + li0)
    return ErgodicityReport(bool(scale_ok and speed_ok), *lv, li0, lim, lip)


@dataclass(frozen=True, eq=False)
class InvariantLaw:
    """Tabulated invariant law of ``model``.

    Node arrays have the grid's ``(n_cells, m)`` shape.  ``density``,
    ``exponent`` and ``scale_integrand`` are evaluated between nodes by
    spectral interpolation of the exponent, ``cdf`` by spectral interpolation
    of the tabulated CDF, ``quantile`` by monotone cubic interpolation.
    """

    model: DiffusionModel
    grid: Grid
    phi: np.ndarray
    phi_max: float
    log_G: float
    f: np.ndarray
    cdf_nodes: np.ndarray
    sigma_nodes: np.ndarray
    domain: TruncationDomain
    _quantile: PchipInterpolator = field(repr=False)
    _q_range: tuple = field(repr=False)

    @property
    def G(self) -> float:
        return float(np.exp(self.log_G))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def exponent(self, x):
        """``2 int_0^x S/sigma^2``."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.grid.interpolate(self.phi, x), dtype=float)
        outside = (x < self.grid.lo) | (x > self.grid.hi)
        if np.any(outside):
            g = _exponent_integrand(self.model)
            xs = np.atleast_1d(x)[np.atleast_1d(outside)]
            vals = []
            for xi in xs:
                edge = self.grid.hi if xi > self.grid.hi else self.grid.lo
                base = self.phi[-1, -1] if xi > self.grid.hi else self.phi[0, 0]
                vals.append(base + integrate.quad(lambda v: float(g(np.array(v))), edge, xi)[0])
            if out.ndim == 0:
                return float(vals[0])
            out = out.copy()
            out[outside] = vals
        return float(out) if out.ndim == 0 else out

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return self.exponent(x) - 2.0 * np.log(_sigma_values(self.model, x)) - self.log_G

    def density(self, x):
        return np.exp(self.log_density(x))

    def scale_integrand(self, x):
        """``p(x) = exp(-2 int_0^x S/sigma^2)``."""
        return np.exp(-np.asarray(self.exponent(x)))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.grid.lo, self.grid.hi)
        out = self.grid.interpolate(self.cdf_nodes, xc)
        # keep each value between the tabulated values at the neighbouring
        # nodes, so the result is monotone across nodes
        nodes = self.grid.unique_nodes()
        vals = self.grid.unique_values(self.cdf_nodes)
        hi = np.searchsorted(nodes, xc, side="left").clip(0, nodes.size - 1)
        lo = (np.searchsorted(nodes, xc, side="right") - 1).clip(0, nodes.size - 1)
        out = np.clip(np.clip(out, vals[lo], vals[hi]), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, u):
        """Inverse CDF; ``u`` is clamped to the tabulated range so results
        always lie inside the truncation domain."""
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            z = np.log(u) - np.log1p(-u)
        out = np.clip(self._quantile(np.clip(z, *self._q_range)), self.grid.lo, self.grid.hi)
        return float(out) if np.ndim(out) == 0 else out

    def expect(self, g) -> float:
        """``E g(xi)`` on this law's grid (``g`` a callable or node array)."""
        vals = g if isinstance(g, np.ndarray) else self.grid.evaluate(g, one_sided=True)
        return self.grid.integrate(vals * self.f)

    def tail_mass(self, g=None) -> tuple[float, float]:
        """Laplace-type estimate of ``int |g| f`` beyond ``lo`` and ``hi``."""
        return _tail_estimates(self.model, self.grid, self.phi, self.log_G, g)

    def running_mass(self, values) -> np.ndarray:
        """``int_{-inf}^x g f`` at every node for node values ``g`` of a function
        with ``E g(xi) = 0``.

        Left of the median cell the integral runs from ``lo``, right of it as
        ``-int_x^{+inf}``; the mass beyond each end of the domain is restored
        by a Laplace estimate, so ratios such as ``running / f`` stay accurate
        out to the domain edges.
        """
        grid = self.grid
        g = np.asarray(values, dtype=float)
        gf = g * self.f
        pivot = int(min(np.searchsorted(self.cdf_nodes[:, -1], 0.5), grid.n_cells - 1))
        out = grid.split_running(gf, pivot)
        left_tail, right_tail = _laplace_tails(self.model, grid, g, self.f)
        out[:pivot] += left_tail
        out[pivot:] -= right_tail
        return out

    def with_breakpoints(self, points) -> "InvariantLaw":
        pts = [p for p in points if self.grid.lo < p < self.grid.hi]
        if all(np.any(self.grid.edges == p) for p in pts):
            return self
        return _assemble(self.model, self.grid.with_edges(pts), self.domain.tail_tol)


def _tail_estimates(model, grid, phi, log_G, g=None):
    out = []
    for x, sgn, ph in ((grid.lo, -1.0, phi[0, 0]), (grid.hi, 1.0, phi[-1, -1])):
        h = 1e-5 * max(1.0, abs(x))
        xs = np.array([x - h, x, x + h])
        sig = _sigma_values(model, xs)
        logf_at = ph - 2 * np.log(sig[1]) - log_G
        slope = 2 * float(model.S(np.array(x))) / sig[1] ** 2 - (np.log(sig[2]) - np.log(sig[0])) / h
        mult = 1.0 if g is None else abs(float(g(np.array(x))))
        decay = -sgn * slope
        if g is not None and mult > 0:
            gp = (abs(float(g(np.array(x + h)))) - abs(float(g(np.array(x - h))))) / (2 * h)
            decay -= sgn * gp / mult
        kappa = -sgn * slope
        if decay > 0:
            est = mult * np.exp(logf_at) / decay
        elif g is not None and kappa > 0:
            # |g| near a root looks explosive locally; sum it along the ray
            # under the decay of f instead, and call it divergent only if
            # |g| e^{-t} still grows at the outermost nodes
            t, w = _LAGUERRE
            with np.errstate(over="ignore", invalid="ignore"):
                gt = np.abs(np.asarray(g(x + sgn * t / kappa), dtype=float))
                tail = gt * np.exp(-t)
                est = np.exp(logf_at) * np.sum(w * gt) / kappa
            if not tail[-1] < tail[-2]:
                est = np.inf
        else:
            est = np.inf
        # overflowing g gives NaN; treat it as divergent
        out.append(est if np.isfinite(est) else np.inf)
    return tuple(out)


def _laplace_tails(model, grid, g, f):
    """``int_{-inf}^lo g f`` and ``int_hi^inf g f`` to leading Laplace order."""
    out = []
    for cell, k, nb in ((0, 0, 1), (-1, -1, -2)):
        x, x1 = grid.nodes[cell, k], grid.nodes[cell, nb]
        gx, fx = g[cell, k], f[cell, k]
        if gx == 0.0 or fx == 0.0:
            out.append(0.0)
            continue
        # outward decay rate of log|g f|
        lf = np.log(f[cell, [k, nb]])
        lg = np.log(np.abs(g[cell, [k, nb]]) + 1e-300)
        rate = ((lf[1] - lf[0]) + (lg[1] - lg[0])) / abs(x1 - x)
        out.append(gx * fx / rate if rate > 0 else 0.0)
    return tuple(out)


def _logit(c, sf):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(c) - np.log(sf)


def _quantile_knots(x, z):
    """Strictly increasing knots of the inverse CDF in logit coordinates.

    Runs of tied logits (flat tails, underflow) collapse to their mean abscissa.
    """
    ok = np.isfinite(z)
    x, z = x[ok], z[ok]
    zs, xs = [], []
    start = 0
    for i in range(1, z.size + 1):
        if i == z.size or z[i] > z[start] + 1e-12 * max(1.0, abs(z[start])):
            zs.append(z[start])
            xs.append(x[start:i].mean())
            start = i
    return np.asarray(zs), np.asarray(xs)


def _assemble(model, grid, tail_tol) -> InvariantLaw:
    g = _exponent_integrand(model)
    phi = grid.running_from(grid.evaluate(g), 0.0)
    if not np.all(np.isfinite(phi)):
        raise OverflowInExponent("scale exponent overflowed on the truncation domain")
    sig = _sigma_values(model, grid.nodes)
    phi_max = float(phi.max())
    u = np.exp(phi - phi_max) / sig**2
    Gt = grid.integrate(u)
    if not (np.isfinite(Gt) and Gt > 0):
        raise QuadratureFailure("normalizer quadrature failed")
    log_G = float(np.log(Gt) + phi_max)
    f = u / Gt
    cdf = np.clip(grid.running_left(f), 0.0, 1.0)
    sf = np.clip(grid.running_right(f), 0.0, 1.0)
    # the inverse is interpolated against logit(u), computed from the left and
    # right running integrals so both tails keep full relative precision
    z = _logit(np.maximum.accumulate(grid.unique_values(cdf)),
               np.minimum.accumulate(grid.unique_values(sf)))
    zk, xk = _quantile_knots(grid.unique_nodes(), z)
    if zk.size < 2:
        raise QuadratureFailure("invariant CDF is degenerate on the grid")
    q_interp = PchipInterpolator(zk, xk, extrapolate=False)
    tails = _tail_estimates(model, grid, phi, log_G)
    dom = TruncationDomain(grid.lo, grid.hi, tail_tol, *tails)
    return InvariantLaw(model, grid, phi, phi_max, log_G, f, cdf, sig, dom,
                        q_interp, (float(zk[0]), float(zk[-1])))


def _refine(model, lo, hi, n_cells, breakpoints, tol=1e-12, max_rounds=12):
    grid = uniform_grid(lo, hi, n_cells, anchor=0.0).with_edges(breakpoints)
    g = _exponent_integrand(model)
    for _ in range(max_rounds):
        vals = grid.evaluate(g)
        if not np.all(np.isfinite(vals)):
            raise OverflowInExponent("drift/sigma^2 is not finite on the grid")
        phi = grid.running_from(vals, 0.0)
        u = np.exp(phi - phi.max()) / _sigma_values(model, grid.nodes) ** 2
        mask = grid.resolution_error(vals) > tol * max(np.abs(vals).max(), 1e-300)
        mask |= grid.resolution_error(u) > tol * u.max()
        if not mask.any():
            return grid
        grid = grid.refined(mask)
    raise QuadratureFailure(f"adaptive refinement did not converge ({grid.n_cells} cells)")


def build_law(model: DiffusionModel, fields=(), tail_tol: float = 1e-12,
              breakpoints=(), half_width: float = 10.0, n_cells: int = 256,
              check: bool = True) -> InvariantLaw:
    """Tabulate the invariant law of ``model``.

    The domain starts at ``[-half_width, half_width]`` and doubles until the
    estimated density tails, and the tails of ``|F| f`` for every ``F`` in
    ``fields``, are below ``tail_tol``.
    """
    if check:
        rep = check_ergodicity(model)
        if not rep:
            raise NotErgodic(f"{model.name} fails the ergodicity check: {rep}")
    fields = tuple(fields)
    bps = tuple(breakpoints) + tuple(b for F in fields for b in getattr(F, "breakpoints", ()))
    L = float(half_width)
    for _ in range(_MAX_DOUBLINGS + 1):
        grid = _refine(model, -L, L, n_cells, bps)
        law = _assemble(model, grid, tail_tol)
        worst = max(law.domain.tail_lo, law.domain.tail_hi)
        for F in fields:
            worst = max(worst, *law.tail_mass(F))
        if worst < tail_tol:
            log.debug("built invariant law of %s on [%g, %g] with %d cells",
                      model.name, -L, L, grid.n_cells)
            return law
        L *= 2.0
    raise TailDivergence(f"tail mass still {worst:.3g} on [-{L / 2:g}, {L / 2:g}]")


def normalizer(model: DiffusionModel, **kw) -> float:
    """``G(S) = int sigma^-2 exp(2 int_0^y S/sigma^2) dy``."""
    return build_law(model, **kw).G


def stationary_moment(law: InvariantLaw, F: ScalarField) -> float:
    """``E F(xi)`` under the invariant law."""
    if F.breakpoints:
        law = law.with_breakpoints(F.breakpoints)
    tails = law.tail_mass(F)
    if not max(tails) < law.domain.tail_tol:
        try:
            law = build_law(law.model, fields=(F,), tail_tol=law.domain.tail_tol,
                            half_width=2 * max(abs(law.grid.lo), law.grid.hi), check=False)
        except (TailDivergence, QuadratureFailure) as exc:  # domain outgrew the refinement
            raise TailDivergence(f"{F.name} grows faster than the density decays") from exc
    value = law.expect(F)
    if not np.isfinite(value):
        raise QuadratureFailure(f"moment of {F.name} is not finite")
    return value


def sample_stationary(law: InvariantLaw, rng, size=None):
    """Inverse-CDF draws from the invariant law."""
    return law.quantile(rng.random(size))
