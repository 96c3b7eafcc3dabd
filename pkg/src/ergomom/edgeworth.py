"""Brackets, cumulant coefficients and the first-order Edgeworth density.

For a function ``a`` with ``<a, f> = 0`` the Green function and bracket are

    grad G_a(x) = G p(x) int_{-inf}^x 2 a f,      [a] = -sigma grad G_a,

and by ``G sigma^2 p f = 1`` the bracket simplifies to
``[a](x) = -2 int_{-inf}^x a f / (sigma(x) f(x))``.  For ``q = F - theta`` this is
``-Q`` of :mod:`ergomom.nonparam`.

The standardized empirical estimator ``sqrt(T)(theta* - theta)`` has variance
``E[q]^2`` and third cumulant about ``3 c3 / sqrt(T)`` with
``c3 = E[[[q]^2] [q]]`` (the inner bracket applied to the centered square).
The first-order Edgeworth density is

    p*(z) = phi(z; 0, Sigma) (1 + c3 / (2 sqrt(T)) h_3(z; Sigma)),   Sigma = E[q]^2.

The Green function is anchored at 0 rather than at ``-inf``: the bracket only
sees its derivative, and the integral from ``-inf`` diverges for common
moment functions (e.g. ``x^2`` under a Gaussian law).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import InsufficientReplicates, NotInClassC, QuadratureFailure
from .invariant import InvariantLaw
from .model import ScalarField, moment_function
from .nonparam import _certify, log_density_nodes, signed_ratio

log = logging.getLogger(__name__)

__all__ = [
    "BracketedFunction",
    "bracket",
    "variance_coefficient",
    "skewness_coefficient",
    "hermite",
    "normal_pdf",
    "EdgeworthDensity",
    "edgeworth_density",
    "edgeworth_cdf",
    "cumulant_density",
    "mc_cumulants",
    "density_table",
]

GROWTH_MAX = 12.0
CROSS_CHECK_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class BracketedFunction:
    """Centered ``a`` with its Green function and bracket tabulated on
    ``law.grid``.  ``class_c`` records the numeric membership checks."""

    law: InvariantLaw
    a_nodes: np.ndarray
    mean: float
    running: np.ndarray
    G_nodes: np.ndarray
    bracket_nodes: np.ndarray
    class_c: dict = field(default_factory=dict)

    def bracket(self, x):
        return self.law.grid.interpolate(self.bracket_nodes, x)

    def G_a(self, x):
        return self.law.grid.interpolate(self.G_nodes, x)

    def grad_G(self, x):
        """``G p(x) int_{-inf}^x 2 a f`` evaluated from its own definition."""
        law = self.law
        I = law.grid.interpolate(self.running, x)
        return signed_ratio(2.0 * np.atleast_1d(I),
                            np.atleast_1d(law.exponent(x) - law.log_G)).reshape(np.shape(x))

    def cross_check(self, n: int = 20) -> float:
        """Largest relative gap between the tabulated bracket and
        ``-sigma grad G_a`` at ``n`` quantiles of the law."""
        x = self.law.quantile(np.linspace(0.02, 0.98, n))
        direct = -self.law.model.sigma(x) * self.grad_G(x)
        tab = self.bracket(x)
        scale = max(np.max(np.abs(tab)), 1e-300)
        return float(np.max(np.abs(direct - tab)) / scale)

    @property
    def in_class_c(self) -> bool:
        return all(self.class_c.values())


def _growth_ok(grid, values, kmax=GROWTH_MAX):
    """Finite everywhere, and bounded by ``C (1 + |x|)^kmax`` with ``C`` set by
    the central part of the domain."""
    if not np.all(np.isfinite(values)):
        return False
    x = grid.nodes
    w = (1.0 + np.abs(x)) ** kmax
    inner = np.abs(x) <= 1.0
    C = max(np.max(np.abs(values[inner])) if inner.any() else 0.0, 1.0)
    return bool(np.all(np.abs(values) <= 10.0 * C * w))


def _left_l1(law, running, rel=1e-6):
    """Is ``p(y) int_{-inf}^y a f`` integrable on ``(-inf, 0]``?  Judged by the
    weight of the outermost left cell."""
    grid = law.grid
    g = np.abs(signed_ratio(running, law.phi))
    left = grid.nodes <= 0
    cells = grid.cell_integrals(np.where(left, g, 0.0))
    total = cells.sum()
    if total == 0.0:
        return True
    return bool(np.isfinite(total) and cells[0] <= rel * total)


def bracket(law: InvariantLaw, a, strict: bool = False) -> BracketedFunction:
    """Center ``a`` under the invariant law and tabulate ``G_a`` and ``[a]``.

    ``a`` is a :class:`ScalarField`, a moment-function name, or an array of
    values on ``law.grid`` nodes (then the law is used as is).  Membership
    conditions are recorded in ``class_c``; growth or integrability failures
    raise :class:`NotInClassC`, the left-tail ``L^1`` condition only with
    ``strict``.
    """
    if isinstance(a, np.ndarray):
        av = np.asarray(a, dtype=float)
        if av.shape != law.grid.shape:
            raise ValueError("node array does not match the law's grid")
    else:
        a = moment_function(a) if not callable(a) or isinstance(a, ScalarField) else \
            ScalarField(a, name=getattr(a, "__name__", "a"))
        law = _certify(law, a)
        av = law.grid.evaluate(a, one_sided=True)
    grid = law.grid
    if not np.all(np.isfinite(av)):
        raise NotInClassC("a is not finite on the truncation domain", "integrable")
    mean = law.expect(av)
    abs_mass = law.expect(np.abs(av))
    if not np.isfinite(abs_mass):
        raise NotInClassC("a is not integrable under the invariant law", "integrable")
    ac = av - mean
    zeros = np.zeros(grid.shape)
    if law.expect(ac**2) <= 1e-20 * max(law.expect(av**2), 1e-300):
        checks = {"centered": True, "integrable": True, "left_L1": True,
                  "bracket_growth": True, "G_growth": True}
        return BracketedFunction(law, zeros, mean, zeros, zeros, zeros.copy(), checks)
    running = law.running_mass(ac)
    sig = law.sigma_nodes
    br = -signed_ratio(2.0 * running, np.log(sig) + log_density_nodes(law))
    br[(np.abs(running) < 1e-280) & (law.f < 1e-280)] = 0.0
    grad = signed_ratio(2.0 * running, law.phi - law.log_G)
    G_nodes = grid.running_from(grad, 0.0)
    checks = {
        "centered": bool(abs(law.expect(ac)) <= 1e-9 * max(abs_mass, 1.0)),
        "integrable": True,
        "left_L1": _left_l1(law, running),
        "bracket_growth": _growth_ok(grid, br),
        "G_growth": _growth_ok(grid, G_nodes),
    }
    out = BracketedFunction(law, ac, mean, running, G_nodes, br, checks)
    gap = out.cross_check()
    if gap > CROSS_CHECK_RTOL:
        raise QuadratureFailure(f"bracket and -sigma grad G_a disagree (relative gap {gap:.3g})")
    for cond in ("centered", "bracket_growth", "G_growth"):
        if not checks[cond]:
            raise NotInClassC(f"class membership check failed: {cond}", cond)
    if not checks["left_L1"]:
        if strict:
            raise NotInClassC("p(y) int_{-inf}^y a f is not integrable on (-inf, 0]", "left_L1")
        log.debug("left-tail L1 condition fails; Green function anchored at 0")
    return out


def variance_coefficient(law: InvariantLaw, F) -> float:
    """``E[[q]^2(xi)]``, the limiting variance of ``sqrt(T)(theta* - theta)``."""
    bq = bracket(law, moment_function(F))
    return bq.law.expect(bq.bracket_nodes**2)


def skewness_coefficient(law: InvariantLaw, F, return_parts: bool = False):
    """``c3 = E[[[q]^2] [q]]``; the third cumulant is about ``3 c3 / sqrt(T)``."""
    F = moment_function(F)
    try:
        bq = bracket(law, F)
    except NotInClassC as exc:
        raise NotInClassC(f"q fails: {exc}", ("q", exc.condition)) from exc
    k = bq.bracket_nodes
    try:
        bb = bracket(bq.law, k**2)
    except NotInClassC as exc:
        raise NotInClassC(f"[q]^2 fails: {exc}", ("[q]^2", exc.condition)) from exc
    c3 = bq.law.expect(bb.bracket_nodes * k)
    if return_parts:
        return c3, bq, bb
    return c3


# --- Hermite polynomials and densities -------------------------------------------

def hermite(k: int, z, Sigma: float = 1.0):
    """``h_k(z; Sigma) = (-1)^k phi^{-1} d^k phi / dz^k`` for ``N(0, Sigma)``, k <= 4."""
    if Sigma <= 0:
        raise ValueError("Sigma must be positive")
    z = np.asarray(z, dtype=float)
    s = float(Sigma)
    if k == 0:
        out = np.ones_like(z)
    elif k == 1:
        out = z / s
    elif k == 2:
        out = z**2 / s**2 - 1.0 / s
    elif k == 3:
        out = z**3 / s**3 - 3.0 * z / s**2
    elif k == 4:
        out = z**4 / s**4 - 6.0 * z**2 / s**3 + 3.0 / s**2
    else:
        raise ValueError("only k = 0..4 are implemented")
    return float(out) if out.ndim == 0 else out


def normal_pdf(z, Sigma: float = 1.0):
    return stats.norm.pdf(z, scale=np.sqrt(Sigma))


@dataclass(frozen=True)
class EdgeworthDensity:
    """``p*(z) = phi(z; 0, I_star_inv) (1 + c3 / (2 sqrt(T)) h_3(z; I_star_inv))``."""

    I_star_inv: float
    c3: float
    T: float

    @classmethod
    def from_cumulants(cls, k2: float, k3: float, T: float) -> "EdgeworthDensity":
        """Density written with the cumulants ``k2``, ``k3`` of the standardized
        estimator: ``phi(z; 0, k2) (1 + k3 / 6 h_3(z; k2))``."""
        return cls(float(k2), float(k3) * np.sqrt(T) / 3.0, float(T))

    @property
    def correction(self) -> float:
        return self.c3 / (2.0 * np.sqrt(self.T))

    def pdf(self, z):
        S = self.I_star_inv
        return normal_pdf(z, S) * (1.0 + self.correction * hermite(3, z, S))

    def cdf(self, z):
        # int_{-inf}^z h_3 phi = -h_2(z) phi(z)
        S = self.I_star_inv
        return stats.norm.cdf(z, scale=np.sqrt(S)) \
            - self.correction * hermite(2, z, S) * normal_pdf(z, S)

    def positive_on(self, z) -> bool:
        """Whether the correction factor stays positive on the points ``z``."""
        return bool(np.all(1.0 + self.correction * hermite(3, z, self.I_star_inv) > 0))

    def __call__(self, z):
        return self.pdf(z)


def edgeworth_density(coefs: EdgeworthDensity):
    """Pointwise evaluator of ``p*_{T,1}``."""
    return coefs.pdf


def edgeworth_cdf(coefs: EdgeworthDensity):
    return coefs.cdf


def cumulant_density(k2: float, k3: float):
    """``p_{T,1}(z) = phi(z; 0, k2) (1 + k3 / 6 h_3(z; k2))`` from given cumulants."""
    def pdf(z):
        return normal_pdf(z, k2) * (1.0 + k3 / 6.0 * hermite(3, z, k2))
    return pdf


def mc_cumulants(values, min_count: int = 1000) -> dict:
    """Unbiased k-statistics of a replicate ensemble.

    The sample is shifted by its first value before ``k2`` and ``k3`` are
    formed, which leaves them unchanged in exact arithmetic and keeps the
    power sums well conditioned.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < min_count:
        raise InsufficientReplicates(f"need at least {min_count} values, got {x.size}")
    y = x - x[0]
    return {"k1": float(np.mean(x)), "k2": float(stats.kstat(y, 2)),
            "k3": float(stats.kstat(y, 3)), "n": int(x.size)}


def density_table(coefs: EdgeworthDensity, values=None, z=None, n_points: int = 81):
    """Columns ``z``, normal density, Edgeworth density and (when replicate
    values are given) a histogram density with one bin centred on each ``z``."""
    if z is None:
        half = 4.0 * np.sqrt(coefs.I_star_inv)
        z = np.linspace(-half, half, n_points)
    z = np.asarray(z, dtype=float)
    table = {"z": z, "normal_density": normal_pdf(z, coefs.I_star_inv),
             "edgeworth_density": coefs.pdf(z)}
    if values is not None:
        h = z[1] - z[0]
        edges = np.concatenate((z - h / 2, [z[-1] + h / 2]))
        x = np.asarray(values, dtype=float)
        x = x[np.isfinite(x)]
        counts, _ = np.histogram(x, bins=edges)
        table["empirical_histogram_density"] = counts / (max(x.size, 1) * h)
    return table
