"""Path simulation and path functionals (time integrals, Ito sums).

Replicate ``r`` of a study draws from its own Philox stream seeded by
``SeedSequence(master_seed, spawn_key=key)``, so a replicate's path does not
depend on how replicates are batched or distributed over workers.  Batches
are simulated as ``(R, N + 1)`` arrays with the time loop vectorized over
replicates; every arithmetic step is elementwise, so row ``r`` of a batch is
bitwise identical to the same replicate simulated alone.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import BlowUp, NonPositiveSigma
from .model import DiffusionModel, Path

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "replicate_rng",
    "simulate_path",
    "simulate_batch",
    "time_integral",
    "ito_integral",
    "brownian_increments",
    "integrate_increments",
    "coarsen_increments",
    "write_path_csv",
    "read_path_csv",
]

MAX_DT = 0.05
_DEFAULT_BOUND = 1e8


@dataclass(frozen=True)
class SimConfig:
    """Discretization settings.  ``init`` is ``"stationary"`` or a float
    starting point; ``scheme`` is ``"euler"`` or ``"milstein"``."""

    T: float
    dt: float = 0.01
    init: object = "stationary"
    seed: int = 0
    scheme: str = "euler"

    def __post_init__(self):
        if not (0 < self.dt <= MAX_DT):
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            warnings.warn(f"T/dt = {ratio:g} is not an integer; rounding to {round(ratio)} steps")
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (self.init == "stationary" or isinstance(self.init, (int, float))):
            raise ValueError("init must be 'stationary' or a number")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))


def replicate_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based stream for replicate ``key``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _draw(rng, cfg, law):
    if cfg.init == "stationary":
        if law is None:
            raise ValueError("stationary initialization needs the invariant law")
        x0 = float(law.quantile(rng.random()))
    else:
        x0 = float(cfg.init)
    return x0, rng.standard_normal(cfg.n_steps) * math.sqrt(cfg.dt)


def _sigma_prime(model):
    if model.diffusion_prime is not None:
        return model.diffusion_prime

    def fd(x):
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        return (model.sigma(x + h) - model.sigma(x - h)) / (2 * h)
    return fd


def simulate_batch(model: DiffusionModel, cfg: SimConfig, rngs, law=None,
                   raise_on_blowup: bool = True):
    """Simulate one path per generator in ``rngs``.

    Returns ``(values, failed)`` with ``values`` of shape ``(R, N + 1)``.  Rows
    whose state leaves ``10 * law.domain.hi`` (or becomes non-finite) are
    flagged in ``failed`` and filled with NaN after the blow-up; with
    ``raise_on_blowup`` the first such row raises :class:`BlowUp` instead.
    """
    rngs = list(rngs)
    R, N, dt = len(rngs), cfg.n_steps, cfg.dt
    x = np.empty((R, N + 1))
    dW = np.empty((R, N))
    for r, rng in enumerate(rngs):
        x[r, 0], dW[r] = _draw(rng, cfg, law)
    bound = 10.0 * max(abs(law.grid.lo), law.grid.hi) if law is not None else _DEFAULT_BOUND
    milstein = cfg.scheme == "milstein"
    sp = _sigma_prime(model) if milstein else None
    failed = np.zeros(R, dtype=bool)
    check_every = 128
    cur = x[:, 0].copy()
    for i in range(N):
        s = model.sigma(cur)
        dw = dW[:, i]
        nxt = cur + model.S(cur) * dt + s * dw
        if milstein:
            nxt += 0.5 * s * sp(cur) * (dw * dw - dt)
        x[:, i + 1] = nxt
        cur = nxt
        if (i + 1) % check_every == 0 or i == N - 1:
            bad = ~(np.abs(cur) <= bound)
            if bad.any():
                rows = np.nonzero(bad & ~failed)[0]
                for r in rows:
                    step = int(np.argmax(~(np.abs(x[r, : i + 2]) <= bound)))
                    if raise_on_blowup:
                        raise BlowUp(f"path left [-{bound:g}, {bound:g}] at step {step}", step=step)
                    log.warning("replicate %d blew up at step %d", r, step)
                failed |= bad
                cur = np.where(failed, 0.0, cur)
    if failed.any():
        x[failed] = np.nan
    return x, failed


def integrate_increments(model: DiffusionModel, x0, dW, dt: float, scheme: str = "euler"):
    """Discretized paths driven by given Brownian increments ``dW`` (shape
    ``(R, N)`` or ``(N,)``), started at ``x0``.  No blow-up checks."""
    dW = np.asarray(dW, dtype=float)
    squeeze = dW.ndim == 1
    dW = np.atleast_2d(dW)
    R, N = dW.shape
    x = np.empty((R, N + 1))
    x[:, 0] = x0
    sp = _sigma_prime(model) if scheme == "milstein" else None
    cur = x[:, 0].copy()
    for i in range(N):
        s = model.sigma(cur)
        dw = dW[:, i]
        nxt = cur + model.S(cur) * dt + s * dw
        if sp is not None:
            nxt += 0.5 * s * sp(cur) * (dw * dw - dt)
        x[:, i + 1] = cur = nxt
    return x[0] if squeeze else x


def coarsen_increments(dW, factor: int = 2):
    """Sum consecutive blocks of ``factor`` increments (same Brownian path on a
    coarser grid)."""
    dW = np.asarray(dW, dtype=float)
    N = dW.shape[-1]
    if N % factor:
        raise ValueError("number of increments is not divisible by factor")
    return dW.reshape(dW.shape[:-1] + (N // factor, factor)).sum(axis=-1)


def simulate_path(model: DiffusionModel, cfg: SimConfig, rng=None, law=None) -> Path:
    """One discretized path of ``dX = S dt + sigma dW``.

    Deterministic given ``rng`` (default: a fresh stream from ``cfg.seed``).
    """
    if rng is None:
        rng = replicate_rng(cfg.seed)
    values, _ = simulate_batch(model, cfg, [rng], law=law)
    return Path(cfg.dt, values[0], seed=cfg.seed)


def _values(path, dt=None):
    if isinstance(path, Path):
        return path.values, path.dt
    if dt is None:
        raise ValueError("dt is required when passing raw values")
    return np.asarray(path, dtype=float), float(dt)


def time_integral(path, g, dt=None):
    """Trapezoidal ``int_0^T g(X_t) dt``; works row-wise on 2-D arrays."""
    v, dt = _values(path, dt)
    gv = np.asarray(g(v), dtype=float)
    return dt * (np.sum(gv, axis=-1) - 0.5 * (gv[..., 0] + gv[..., -1]))


def brownian_increments(path, model: DiffusionModel, dt=None):
    """``dW_i = (X_{i+1} - X_i - S(X_i) dt) / sigma(X_i)``."""
    v, dt = _values(path, dt)
    left = v[..., :-1]
    s = np.asarray(model.sigma(left), dtype=float)
    if np.any(s <= 0):
        raise NonPositiveSigma("cannot recover Brownian increments where sigma <= 0")
    return (np.diff(v, axis=-1) - model.S(left) * dt) / s


def ito_integral(path, model: DiffusionModel, g, dt=None):
    """Left-point sum ``sum g(X_i) dW_i`` with increments recovered from the path."""
    v, dt = _values(path, dt)
    dw = brownian_increments(v, model, dt)
    return np.sum(np.asarray(g(v[..., :-1]), dtype=float) * dw, axis=-1)


def write_path_csv(path: Path, file) -> None:
    """First line ``dt,<value>``, then one state value per line."""
    lines = [f"dt,{path.dt!r}"] + [repr(float(v)) for v in path.values]
    text = "\n".join(lines) + "\n"
    if hasattr(file, "write"):
        file.write(text)
    else:
        with open(file, "w", encoding="utf-8") as fh:
            fh.write(text)


def read_path_csv(file) -> Path:
    if hasattr(file, "read"):
        text = file.read()
    else:
        with open(file, encoding="utf-8") as fh:
            text = fh.read()
    rows = [r.strip() for r in text.splitlines() if r.strip()]
    if not rows:
        raise ValueError("empty path file")
    head = rows[0].lstrip("#").strip()
    key, _, val = head.replace("=", ",").partition(",")
    if key.strip().lower() != "dt":
        raise ValueError("path CSV must start with a 'dt,<value>' header line")
    values = np.array([float(r.split(",")[-1]) for r in rows[1:]])
    return Path(float(val), values)
