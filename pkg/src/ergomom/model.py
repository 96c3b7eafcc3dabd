"""Diffusion models, parametric drift families and discretized paths.

Functions are carried as vectorized callbacks plus metadata.  Every callback
must accept a numpy array and return an array of the same shape.  Built-in
callbacks are module-level functions (wrapped with :func:`functools.partial`
where they need parameters) so that models pickle cleanly into worker
processes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .exceptions import ConfigError, DerivativeMismatch

__all__ = [
    "ScalarField",
    "DiffusionModel",
    "ParametricFamily",
    "Path",
    "constant",
    "power",
    "indicator",
    "moment_function",
    "make_ou_family",
    "make_nonlinear_family",
    "get_family",
    "FAMILIES",
    "check_derivatives",
]


@dataclass(frozen=True)
class ScalarField:
    """A real function of one real variable with growth metadata.

    ``growth = (C, k)`` declares ``|f(x)| <= C (1 + |x|)**k``.  ``breakpoints``
    lists points where the function is not smooth; quadrature grids put cell
    edges there.
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "f"
    growth: tuple[float, float] = (1.0, 0.0)
    smoothness: str = "smooth"
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.asarray(self.func(arr), dtype=float)
        if out.shape != arr.shape:
            out = np.broadcast_to(out, arr.shape).copy()
        return float(out) if out.ndim == 0 else out

    def check_growth(self, x) -> bool:
        """Spot-check the declared growth bound on the points ``x``."""
        x = np.asarray(x, dtype=float)
        C, k = self.growth
        return bool(np.all(np.abs(self(x)) <= C * (1.0 + np.abs(x)) ** k * (1 + 1e-12)))

    def shifted(self, c: float) -> "ScalarField":
        """Return ``x -> f(x) + c``."""
        C, k = self.growth
        return ScalarField(
            partial(_add_const, self.func, float(c)),
            name=f"({self.name})+{c:g}",
            growth=(C + abs(c), k),
            smoothness=self.smoothness,
            breakpoints=self.breakpoints,
        )


def _add_const(func, c, x):
    return func(x) + c


def _const(c, x):
    return np.full(np.shape(x), c, dtype=float)


def _power(k, x):
    return x**k


def _abs_power(k, x):
    return np.abs(x) ** k


def _indicator_below(x0, x):
    return (x < x0).astype(float)


def constant(c: float) -> ScalarField:
    return ScalarField(partial(_const, float(c)), name=f"{c:g}", growth=(abs(c), 0.0))


def power(k: int) -> ScalarField:
    return ScalarField(partial(_power, int(k)), name=f"x^{k}", growth=(1.0, float(k)))


def indicator(x0: float) -> ScalarField:
    """The indicator of ``{x < x0}``; its mean is the invariant CDF at ``x0``."""
    return ScalarField(
        partial(_indicator_below, float(x0)),
        name=f"indicator({x0:g})",
        growth=(1.0, 0.0),
        smoothness="discontinuous",
        breakpoints=(float(x0),),
    )


_MOMENT_RE = re.compile(r"^\s*(?:indicator|ind)\(\s*([-+0-9.eE]+)\s*\)\s*$")


def moment_function(name) -> ScalarField:
    """Resolve a moment-function name: ``x``, ``x2``, ``x4``, ``xk``, ``abs3``,
    ``const(c)``, ``indicator(x0)``.  A :class:`ScalarField` passes through."""
    if isinstance(name, ScalarField):
        return name
    s = str(name).strip().lower().replace("^", "")
    if s == "x":
        return power(1)
    m = re.fullmatch(r"x(\d+)", s)
    if m:
        return power(int(m.group(1)))
    m = re.fullmatch(r"abs(\d+(?:\.\d+)?)", s)
    if m:
        k = float(m.group(1))
        return ScalarField(partial(_abs_power, k), name=f"|x|^{k:g}", growth=(1.0, k),
                           smoothness="continuous", breakpoints=(0.0,))
    m = re.fullmatch(r"const\(\s*([-+0-9.eE]+)\s*\)", s)
    if m:
        return constant(float(m.group(1)))
    m = _MOMENT_RE.match(s)
    if m:
        return indicator(float(m.group(1)))
    raise ConfigError(f"unknown moment function {name!r}")


@dataclass(frozen=True)
class DiffusionModel:
    """``dX = S(X) dt + sigma(X) dW`` with known ``sigma``."""

    drift: ScalarField
    diffusion: ScalarField
    name: str = "model"
    diffusion_prime: ScalarField | None = None

    def S(self, x):
        return self.drift(x)

    def sigma(self, x):
        return self.diffusion(x)


@dataclass(frozen=True)
class ParametricFamily:
    """Drift family ``S(gamma, x)`` on ``gamma_range = (alpha, beta)``.

    Derivative slots: ``S_dot`` is d/dgamma, ``S_ddot`` the second
    gamma-derivative, ``S_dot_prime`` is d/dx d/dgamma, ``sigma_prime`` is
    d sigma/dx.
    """

    name: str
    gamma_range: tuple[float, float]
    S: Callable
    S_dot: Callable
    S_ddot: Callable
    S_dot_prime: Callable
    sigma: Callable
    sigma_prime: Callable

    def model(self, gamma: float) -> DiffusionModel:
        return DiffusionModel(
            drift=ScalarField(partial(self.S, float(gamma)), name=f"{self.name}.S[{gamma:g}]",
                              growth=(abs(gamma) + 1.0, 3.0)),
            diffusion=ScalarField(self.sigma, name=f"{self.name}.sigma", growth=(2.0, 1.0)),
            name=f"{self.name}(gamma={gamma:g})",
            diffusion_prime=ScalarField(self.sigma_prime, name=f"{self.name}.sigma'"),
        )

    def contains(self, gamma: float) -> bool:
        a, b = self.gamma_range
        return a < gamma < b


@dataclass(frozen=True)
class Path:
    """Uniformly sampled trajectory ``values[i] = X(i * dt)``."""

    dt: float
    values: np.ndarray
    seed: object = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a path needs a 1-D array of at least two values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def __len__(self):
        return self.values.size


# --- built-in families -------------------------------------------------------

def _ou_S(gamma, x):
    return -gamma * x


def _ou_S_dot(gamma, x):
    return -np.asarray(x, dtype=float)


def _zero(gamma, x):
    return np.zeros(np.shape(x))


def _minus_one(gamma, x):
    return np.full(np.shape(x), -1.0)


def _unit(x):
    return np.ones(np.shape(x))


def _nil(x):
    return np.zeros(np.shape(x))


def make_ou_family() -> ParametricFamily:
    """Ornstein-Uhlenbeck family ``S = -gamma x``, ``sigma = 1``, gamma in (0.1, 10)."""
    return ParametricFamily(
        name="ou",
        gamma_range=(0.1, 10.0),
        S=_ou_S,
        S_dot=_ou_S_dot,
        S_ddot=_zero,
        S_dot_prime=_minus_one,
        sigma=_unit,
        sigma_prime=_nil,
    )


def _nl_S(gamma, x):
    return -gamma * x - x**3 / (1.0 + x**2)


def _nl_sigma(x):
    return np.sqrt(1.0 + 0.5 / (1.0 + x**2))


def _nl_sigma_prime(x):
    return -0.5 * x / ((1.0 + x**2) ** 2 * _nl_sigma(x))


def make_nonlinear_family() -> ParametricFamily:
    """``S = -gamma x - x^3/(1+x^2)``, ``sigma = sqrt(1 + 0.5/(1+x^2))``.

    The state-dependent sigma makes every term of the smooth score nonzero.
    """
    return ParametricFamily(
        name="nonlinear",
        gamma_range=(0.1, 10.0),
        S=_nl_S,
        S_dot=_ou_S_dot,
        S_ddot=_zero,
        S_dot_prime=_minus_one,
        sigma=_nl_sigma,
        sigma_prime=_nl_sigma_prime,
    )


FAMILIES = {"ou": make_ou_family, "nonlinear": make_nonlinear_family}


def get_family(name) -> ParametricFamily:
    if isinstance(name, ParametricFamily):
        return name
    try:
        return FAMILIES[str(name).lower()]()
    except KeyError:
        raise ConfigError(f"unknown family {name!r}; known: {sorted(FAMILIES)}") from None


def check_derivatives(family: ParametricFamily, n: int = 100, seed: int = 0,
                      rtol: float = 1e-4, x_scale: float = 3.0) -> dict:
    """Compare the analytic derivative slots with central differences.

    Raises :class:`DerivativeMismatch` when any slot disagrees beyond
    ``rtol * (1 + |value|)``; returns the worst errors otherwise.
    """
    rng = np.random.default_rng(seed)
    a, b = family.gamma_range
    g = rng.uniform(a + 0.05 * (b - a), b - 0.05 * (b - a), n)
    x = rng.normal(0.0, x_scale, n)
    h = 1e-5
    checks = {
        "S_dot": (family.S_dot(g, x), (family.S(g + h, x) - family.S(g - h, x)) / (2 * h)),
        "S_ddot": (family.S_ddot(g, x),
                   (family.S_dot(g + h, x) - family.S_dot(g - h, x)) / (2 * h)),
        "S_dot_prime": (family.S_dot_prime(g, x),
                        (family.S_dot(g, x + h) - family.S_dot(g, x - h)) / (2 * h)),
        "sigma_prime": (family.sigma_prime(x),
                        (family.sigma(x + h) - family.sigma(x - h)) / (2 * h)),
    }
    worst = {}
    for slot, (exact, fd) in checks.items():
        exact = np.broadcast_to(exact, x.shape)
        err = np.abs(exact - fd) / (1.0 + np.abs(exact))
        worst[slot] = float(err.max())
        if worst[slot] > rtol:
            raise DerivativeMismatch(f"{family.name}.{slot} disagrees with finite differences "
                                     f"(max scaled error {worst[slot]:.3g})")
    return worst
