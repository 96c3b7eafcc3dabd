"""Acceptance criteria, shared by ``ergomom verify`` and the test suite.

Each criterion returns a :class:`CriterionResult` whose ``line()`` is the
one-line pass/fail record.  Tolerances are module constants so the report
states exactly what was checked.
"""
from __future__ import annotations

import filecmp
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path as FsPath

import numpy as np
from scipy import integrate, stats

from .edgeworth import bracket, variance_coefficient, skewness_coefficient
from .harness import StudyConfig, report, run_study
from .invariant import build_law, stationary_moment
from .model import make_nonlinear_family, make_ou_family, moment_function
from .nonparam import build_bound, ito_decomposition_check, signed_ratio
from .param import delta_bar_T, delta_T, score_potential
from .simulate import coarsen_increments, integrate_increments, replicate_rng

__all__ = ["CriterionResult", "CRITERIA", "run_criteria", "study_verdict", "DEFAULT_SEED"]

DEFAULT_SEED = 12345

ORACLE_TOL = 1e-8
IDENTITY_RTOL = 1e-6
KEYSTONE_TOL = 1e-6
HALVING_RATIO = 0.6  # "halves": fine/coarse residual ratio at most 0.5 plus 20% MC allowance
ITO_ABS_TOL = 0.05
CLT_BAND = 0.10
KS_MAX = 0.05


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    checks: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number}: {status} | {self.title} | {self.detail} | {self.seconds:.1f}s"


def _timed(number, title, budget):
    def deco(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            checks, values, detail = fn(*args, **kw)
            secs = time.perf_counter() - t0
            checks = dict(checks)
            checks[f"runtime<{budget:g}s"] = secs < budget
            return CriterionResult(number, title, all(checks.values()), detail, secs, checks, values)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        run.number, run.title, run.budget = number, title, budget
        return run
    return deco


def _ou_law(gamma=1.0, F=None):
    model = make_ou_family().model(gamma)
    fields = () if F is None else (moment_function(F),)
    return model, build_law(model, fields=fields)


# --- 1 ------------------------------------------------------------------------

@_timed(1, "invariant-law oracle (OU: G, E x^2, E x^4)", 1.0)
def criterion_1(**_):
    _, law = _ou_law(1.0, "x4")
    G = law.G
    m2 = stationary_moment(law, moment_function("x2"))
    m4 = stationary_moment(law, moment_function("x4"))
    errs = {"G": abs(G - np.sqrt(np.pi)), "x2": abs(m2 - 0.5), "x4": abs(m4 - 0.75)}
    checks = {k: v < ORACLE_TOL for k, v in errs.items()}
    detail = ", ".join(f"|{k} err|={v:.1e}" for k, v in errs.items()) + f" (tol {ORACLE_TOL:g})"
    return checks, {"G": G, "x2": m2, "x4": m4}, detail


# --- 2 ------------------------------------------------------------------------

def _long_run_variance(acov):
    """``2 int_0^inf acov(t) dt`` by adaptive quadrature."""
    return 2.0 * integrate.quad(acov, 0.0, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]


@_timed(2, "efficiency-bound identity (avar vs long-run variance vs E[q]^2)", 5.0)
def criterion_2(**_):
    g = 1.0
    v = 1.0 / (2 * g)
    _, law = _ou_law(g)
    oracles = {
        # OU autocovariances: cov(X_0, X_t) = v e^{-g t}, cov(X_0^2, X_t^2) = 2 v^2 e^{-2 g t}
        "x2": _long_run_variance(lambda t: 2 * v**2 * np.exp(-2 * g * t)),
        "x": _long_run_variance(lambda t: v * np.exp(-g * t)),
    }
    checks, values, parts = {}, {}, []
    for F, oracle in oracles.items():
        avar = build_bound(law, F).avar
        vc = variance_coefficient(law, F)
        r1 = abs(avar / oracle - 1)
        r2 = abs(vc / avar - 1)
        checks[f"{F}:avar"] = r1 < IDENTITY_RTOL
        checks[f"{F}:bracket"] = r2 < IDENTITY_RTOL
        values[F] = {"avar": avar, "long_run": oracle, "E[q]^2": vc}
        parts.append(f"{F}: avar={avar:.10g} oracle={oracle:.10g} E[q]^2={vc:.10g}")
    return checks, values, "; ".join(parts) + f" (rtol {IDENTITY_RTOL:g})"


# --- 3 ------------------------------------------------------------------------

@_timed(3, "bracket keystone sup|[q] + Q| on the grid", 5.0)
def criterion_3(**_):
    cases = [("ou", make_ou_family(), "x2"), ("ou", make_ou_family(), "x4"),
             ("nonlinear", make_nonlinear_family(), "x2")]
    checks, values, parts = {}, {}, []
    for name, fam, F in cases:
        law = build_law(fam.model(1.0), fields=(moment_function(F),))
        b = build_bound(law, F)
        br = bracket(b.law, F)
        # bracket from its definition, -sigma * G * p * 2 int a f
        lawb = br.law
        grad = signed_ratio(2.0 * br.running, lawb.phi - lawb.log_G)
        defn = -lawb.sigma_nodes * grad
        if lawb.grid.shape != b.law.grid.shape:
            raise AssertionError("bracket and bound live on different grids")
        sup = float(np.max(np.abs(defn + b.Q_nodes)))
        checks[f"{name}:{F}"] = sup < KEYSTONE_TOL
        values[f"{name}:{F}"] = sup
        parts.append(f"{name}/{F}: {sup:.1e}")
    return checks, values, ", ".join(parts) + f" (tol {KEYSTONE_TOL:g})"


# --- 4 and 7: discretization refinement on a shared Brownian path ------------------

def _coupled_paths(model, law, seed, tag, n_paths, T, dt_fine):
    n_fine = int(round(T / dt_fine))
    x0 = np.empty(n_paths)
    dW = np.empty((n_paths, n_fine))
    for r in range(n_paths):
        rng = replicate_rng(seed, tag, r)
        x0[r] = law.quantile(rng.random())
        dW[r] = rng.standard_normal(n_fine) * np.sqrt(dt_fine)
    fine = integrate_increments(model, x0, dW, dt_fine)
    coarse = integrate_increments(model, x0, coarsen_increments(dW, 2), 2 * dt_fine)
    return coarse, fine


@_timed(4, "Ito decomposition residual halves with dt; < 0.05 at dt=0.005", 120.0)
def criterion_4(seed=DEFAULT_SEED, **_):
    model, law = _ou_law(1.0)
    bound = build_bound(law, "x2")
    coarse, fine = _coupled_paths(model, law, seed, 4, 50, 50.0, 0.005)
    rc = float(np.mean(ito_decomposition_check(coarse, model, bound, dt=0.01)))
    rf = float(np.mean(ito_decomposition_check(fine, model, bound, dt=0.005)))
    ratio = rf / rc
    checks = {"halves": ratio <= HALVING_RATIO, "absolute": rf < ITO_ABS_TOL}
    detail = (f"mean residual {rc:.4f} (dt=0.01) -> {rf:.4f} (dt=0.005), ratio {ratio:.3f} "
              f"(need <= {HALVING_RATIO}); absolute {rf:.4f} (need < {ITO_ABS_TOL})")
    return checks, {"coarse": rc, "fine": rf, "ratio": ratio}, detail


@_timed(7, "score identity residual halves with dt", 60.0)
def criterion_7(seed=DEFAULT_SEED, **_):
    fam = make_ou_family()
    model, law = _ou_law(1.0)
    coarse, fine = _coupled_paths(model, law, seed, 7, 50, 50.0, 0.005)

    def resid(v, dt):
        T = (v.shape[-1] - 1) * dt
        p = score_potential(fam, 1.0, v[:, [0, -1]])
        return np.abs(delta_bar_T(v, fam, 1.0, dt) - delta_T(v, fam, 1.0, dt)
                      - (p[:, 1] - p[:, 0]) / np.sqrt(T))

    rc = float(np.mean(resid(coarse, 0.01)))
    rf = float(np.mean(resid(fine, 0.005)))
    ratio = rf / rc
    checks = {"halves": ratio <= HALVING_RATIO}
    detail = (f"mean residual {rc:.4f} (dt=0.01) -> {rf:.4f} (dt=0.005), ratio {ratio:.3f} "
              f"(need <= {HALVING_RATIO})")
    return checks, {"coarse": rc, "fine": rf, "ratio": ratio}, detail


# --- 5 and 6: the T=100 study ----------------------------------------------------

@lru_cache(maxsize=4)
def _study(F, estimators, seed, threads):
    cfg = StudyConfig(family="ou", gamma_true=1.0, F=F, T_list=(100.0,), dt=0.01,
                      replicates=2000, master_seed=seed, estimators=estimators)
    return run_study(cfg, threads=threads)


def _clt_checks(result):
    s = result.summary["100"]
    o = result.oracles
    ve, vg = s["empirical"]["var"], s["one_step_gamma"]["var"]
    ke, kg = s["empirical"]["KS_normal"], s["one_step_gamma"]["KS_normal"]
    checks = {
        "var(theta*)": abs(ve / o["avar_nonparametric"] - 1) <= CLT_BAND,
        "var(gamma~)": abs(vg / o["avar_gamma"] - 1) <= CLT_BAND,
        "KS(theta*)": ke < KS_MAX,
        "KS(gamma~)": kg < KS_MAX,
    }
    detail = (f"var sqrt(T)(theta*-theta)={ve:.4f} vs {o['avar_nonparametric']:.4f}, "
              f"var sqrt(T)(gamma~-gamma)={vg:.4f} vs {o['avar_gamma']:.4f} (band {CLT_BAND:.0%}); "
              f"KS {ke:.4f}, {kg:.4f} (need < {KS_MAX})")
    return checks, {"var_theta": ve, "var_gamma": vg, "KS_theta": ke, "KS_gamma": kg}, detail


@_timed(5, "first-order CLT at T=100 (R=2000)", 600.0)
def criterion_5(seed=DEFAULT_SEED, threads=None, **_):
    return _clt_checks(_study("x2", ("empirical", "one_step", "mle"), seed, threads))


def _gap_checks(result):
    s = result.summary["100"]
    o = result.oracles
    gap = o["avar_nonparametric"] - o["avar_parametric"]
    ve, vo = s["empirical"]["var"], s["one_step"]["var"]
    checks = {"gap": ve - vo >= 0.5 * gap}
    detail = (f"var(theta*)={ve:.4f}, var(theta~)={vo:.4f}, difference {ve - vo:.4f} "
              f"(need >= {0.5 * gap:.4f} = half of {o['avar_nonparametric']:.4f} - "
              f"{o['avar_parametric']:.4f})")
    return checks, {"var_empirical": ve, "var_one_step": vo, "oracle_gap": gap}, detail


@_timed(6, "efficiency gap for x^4 (one-step beats empirical)", 600.0)
def criterion_6(seed=DEFAULT_SEED, threads=None, **_):
    return _gap_checks(_study("x4", ("empirical", "one_step"), seed, threads))


# --- 8 ------------------------------------------------------------------------

N_BATCHES = 50


def _k3_with_se(x, n_batches=N_BATCHES):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    k3 = float(stats.kstat(x - x[0], 3))
    parts = np.array_split(x, n_batches)
    b = np.array([stats.kstat(p - p[0], 3) for p in parts])
    return k3, float(np.std(b, ddof=1) / np.sqrt(n_batches))


def skewness_fit(Ts, k3, se):
    """Weighted least squares for ``sqrt(T) k3 / 3``: the one-term model
    ``c3`` and the two-term model ``c3 + d / T`` (the next order of the
    cumulant expansion).  Returns estimates with 95% half-widths."""
    Ts, k3, se = map(np.asarray, (Ts, k3, se))
    y = np.sqrt(Ts) * k3 / 3.0
    sy = np.sqrt(Ts) * se / 3.0
    w = 1.0 / sy**2
    out = {}
    c1 = float(np.sum(w * y) / np.sum(w))
    out["one_term"] = (c1, float(1.96 / np.sqrt(np.sum(w))))
    X = np.column_stack([np.ones_like(y), 1.0 / Ts])
    A = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(A)
    beta = cov @ (X.T @ (w * y))
    out["two_term"] = (float(beta[0]), float(1.96 * np.sqrt(cov[0, 0])), float(beta[1]))
    return out


@lru_cache(maxsize=2)
def _edgeworth_study(seed, threads):
    cfg = StudyConfig(family="ou", gamma_true=1.0, F="x2", T_list=(25.0, 50.0, 100.0),
                      dt=0.01, replicates=100_000, master_seed=seed, estimators=("empirical",))
    return run_study(cfg, threads=threads)


@_timed(8, "Edgeworth improvement at T=25 and third-cumulant fit (R=1e5)", 1800.0)
def criterion_8(seed=DEFAULT_SEED, threads=None, **_):
    res = _edgeworth_study(seed, threads)
    s25 = res.summary["25"]["empirical"]
    c3 = res.oracles["c3"]
    Ts = res.config.T_list
    est = [_k3_with_se(res.values[T]["empirical"]) for T in Ts]
    fit = skewness_fit(Ts, [e[0] for e in est], [e[1] for e in est])
    c2, h2, d2 = fit["two_term"]
    c1, h1 = fit["one_term"]
    checks = {"KS": s25["KS_edgeworth"] < s25["KS_normal"], "c3 band": abs(c2 - c3) <= h2}
    detail = (f"KS edgeworth {s25['KS_edgeworth']:.4f} vs normal {s25['KS_normal']:.4f}; "
              f"c3={c3:.4f}, fit c3+d/T: {c2:.4f} +- {h2:.4f} (d={d2:.3f}); "
              f"one-term fit {c1:.4f} +- {h1:.4f} ({'contains' if abs(c1 - c3) <= h1 else 'excludes'} c3)")
    values = {"KS_edgeworth": s25["KS_edgeworth"], "KS_normal": s25["KS_normal"], "c3": c3,
              "fit": fit, "k3": {f"{T:g}": e for T, e in zip(Ts, est)}}
    return checks, values, detail


# --- 9 ------------------------------------------------------------------------

@_timed(9, "determinism across thread counts (byte-identical outputs)", 60.0)
def criterion_9(seed=DEFAULT_SEED, threads=None, **_):
    cfg = StudyConfig(family="ou", gamma_true=1.0, F="x2", T_list=(10.0, 20.0), dt=0.01,
                      replicates=600, master_seed=seed, estimators=("empirical", "one_step", "mle"))
    many = max(2, threads or 4)
    with tempfile.TemporaryDirectory() as tmp:
        a = report(run_study(cfg, threads=1), FsPath(tmp) / "one")
        b = report(run_study(cfg, threads=many), FsPath(tmp) / "many")
        same = {k: filecmp.cmp(a[k], b[k], shallow=False) for k in a}
    detail = f"threads 1 vs {many}: " + ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}"
                                                  for k, v in same.items())
    return same, {}, detail


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_criteria(numbers=None, seed=DEFAULT_SEED, threads=None, echo=None) -> list:
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    out = []
    for n in numbers:
        res = CRITERIA[n](seed=seed, threads=threads)
        if echo:
            echo(res.line())
        out.append(res)
    return out


# --- verdict table for a study ------------------------------------------------------

def study_verdict(result) -> str:
    """One line per acceptance criterion; criteria that this study's
    configuration cannot decide are listed as not evaluated."""
    cfg = result.config
    base = (cfg.family == "ou" and cfg.gamma_true == 1.0 and cfg.dt == 0.01
            and cfg.replicates >= 2000 and 100.0 in cfg.T_list and "100" in result.summary)
    lines = []
    for n, fn in CRITERIA.items():
        status, detail = "NOT EVALUATED", "run `ergomom verify` for this criterion"
        try:
            if n == 5 and base and cfg.F == "x2" and {"empirical", "one_step"} <= set(cfg.estimators):
                checks, _, detail = _clt_checks(result)
                status = "PASS" if all(checks.values()) else "FAIL"
            elif n == 6 and base and cfg.F == "x4" and {"empirical", "one_step"} <= set(cfg.estimators):
                checks, _, detail = _gap_checks(result)
                status = "PASS" if all(checks.values()) else "FAIL"
            elif n == 8 and cfg.F == "x2" and "25" in result.summary and "empirical" in cfg.estimators:
                s = result.summary["25"]["empirical"]
                if s["KS_edgeworth"] is not None:
                    ok = s["KS_edgeworth"] < s["KS_normal"]
                    status = "PARTIAL PASS" if ok else "FAIL"
                    detail = (f"KS edgeworth {s['KS_edgeworth']:.4f} vs normal {s['KS_normal']:.4f}; "
                              "cumulant fit needs `ergomom verify`")
        except (KeyError, TypeError) as exc:
            status, detail = "NOT EVALUATED", f"missing summary entry {exc}"
        lines.append(f"{n} | {status} | {fn.title} | {detail}")
    return "criterion | status | title | detail\n" + "\n".join(lines) + "\n"
