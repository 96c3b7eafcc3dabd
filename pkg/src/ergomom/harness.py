"""Monte Carlo studies: configuration, replicate fan-out, summaries, reports.

A study simulates stationary paths for every horizon in ``T_list`` and
standardizes each selected estimator by its quadrature truth,
``sqrt(T) (estimate - truth)``.  Replicate ``r`` at horizon index ``i`` always
draws from the stream ``(master_seed, i, r)``, and work is cut into chunks of
a fixed size, so results do not depend on the number of worker processes.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np
from scipy import stats

from . import __version__
from .edgeworth import EdgeworthDensity, density_table, skewness_coefficient
from .exceptions import ConfigError, ErgomomError, NotInClassC, StudyFailure
from .invariant import build_law, stationary_moment
from .model import get_family, moment_function
from .nonparam import build_bound, empirical_moment
from .param import _moment_quantities, build_context, mle, one_step_batch
from .simulate import SimConfig, replicate_rng, simulate_batch

log = logging.getLogger(__name__)

__all__ = [
    "StudyConfig",
    "StudyResult",
    "run_study",
    "summarize",
    "report",
    "ESTIMATORS",
    "CHUNK",
]

ESTIMATORS = ("empirical", "one_step", "mle")
CHUNK = 250
MAX_ERROR_FRACTION = 0.01

# flag bits per replicate and estimator
BLOWUP, CLAMPED, FAILED, BOUNDARY = 1, 2, 4, 8
_ERROR_BITS = BLOWUP | CLAMPED | FAILED


def _as_tuple(value, conv):
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").replace(" ", ",").split(",") if v]
    elif np.isscalar(value):
        value = [value]
    return tuple(conv(v) for v in value)


@dataclass(frozen=True)
class StudyConfig:
    """Settings of one Monte Carlo study."""

    family: str = "ou"
    gamma_true: float = 1.0
    F: str = "x2"
    T_list: tuple = (100.0,)
    dt: float = 0.01
    replicates: int = 2000
    master_seed: int = 0
    estimators: tuple = ("empirical",)
    outputs: str | None = None
    scheme: str = "euler"

    def __post_init__(self):
        object.__setattr__(self, "T_list", _as_tuple(self.T_list, float))
        object.__setattr__(self, "estimators", _as_tuple(self.estimators, str))
        object.__setattr__(self, "gamma_true", float(self.gamma_true))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "master_seed", int(self.master_seed))
        fam = get_family(self.family)
        if not fam.contains(self.gamma_true):
            raise ConfigError(f"gamma_true={self.gamma_true} outside {fam.gamma_range}")
        moment_function(self.F)
        if not self.T_list:
            raise ConfigError("T_list must not be empty")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigError(f"estimators must be a nonempty subset of {ESTIMATORS}")
        for T in self.T_list:
            ratio = T / self.dt
            if T <= 0 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigError(f"T={T} is not a positive multiple of dt={self.dt}")
        SimConfig(T=self.T_list[0], dt=self.dt, scheme=self.scheme)

    def identity(self) -> dict:
        """Fields that determine the results (the output location does not)."""
        d = asdict(self)
        d.pop("outputs")
        d["T_list"] = list(self.T_list)
        d["estimators"] = list(self.estimators)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **kw) -> "StudyConfig":
        d = asdict(self)
        d.update(kw)
        return StudyConfig(**d)

    @classmethod
    def from_string(cls, text: str, **overrides) -> "StudyConfig":
        """Parse an INI file; sections are for readability, keys are the
        field names and may appear in any section."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            try:
                cp.read_string(text)
            except configparser.MissingSectionHeaderError:
                cp = configparser.ConfigParser()
                cp.optionxform = str
                cp.read_string("[study]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        known = set(cls.__dataclass_fields__)
        values = {}
        for section in cp.sections():
            for key, val in cp.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = val.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "StudyConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_string(fh.read(), **overrides)

    def to_ini(self) -> str:
        d = self.identity()
        lines = ["[model]", f"family = {d['family']}", f"gamma_true = {d['gamma_true']!r}",
                 f"F = {d['F']}", "", "[simulation]",
                 "T_list = " + ", ".join(repr(t) for t in d["T_list"]),
                 f"dt = {d['dt']!r}", f"replicates = {d['replicates']}",
                 f"master_seed = {d['master_seed']}", f"scheme = {d['scheme']}", "",
                 "[study]", "estimators = " + ", ".join(d["estimators"])]
        if self.outputs:
            lines.append(f"outputs = {self.outputs}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class _State:
    """Immutable objects shared by all workers."""

    config: StudyConfig
    model: object
    law: object
    theta: float
    ctx: object


_WORKER_STATE: _State | None = None


def _init_worker(state):
    global _WORKER_STATE
    _WORKER_STATE = state


def _chunk_in_worker(task):
    return _run_chunk(_WORKER_STATE, *task)


def _run_chunk(state: _State, t_idx: int, T: float, start: int, stop: int) -> dict:
    cfg = state.config
    fam = get_family(cfg.family)
    sim = SimConfig(T=T, dt=cfg.dt, seed=cfg.master_seed, scheme=cfg.scheme)
    rngs = [replicate_rng(cfg.master_seed, t_idx, r) for r in range(start, stop)]
    values, failed = simulate_batch(state.model, sim, rngs, law=state.law, raise_on_blowup=False)
    n = stop - start
    rt = np.sqrt(T)
    out = {}
    for est in cfg.estimators:
        out[est] = {"value": np.full(n, np.nan), "gamma": np.full(n, np.nan),
                    "estimate": np.full(n, np.nan), "flags": np.where(failed, BLOWUP, 0)}
    ok = ~failed
    good = values[ok]
    if "empirical" in out and good.size:
        th = empirical_moment(good, moment_function(cfg.F), cfg.dt)
        out["empirical"]["estimate"][ok] = th
        out["empirical"]["value"][ok] = rt * (th - state.theta)
    if "one_step" in out and good.size:
        r = one_step_batch(good, state.ctx, cfg.dt)
        o = out["one_step"]
        o["estimate"][ok] = r["theta_tilde"]
        o["value"][ok] = rt * (r["theta_tilde"] - state.theta)
        o["gamma"][ok] = rt * (r["gamma_tilde"] - cfg.gamma_true)
        o["flags"][np.nonzero(ok)[0][r["clamped"]]] |= CLAMPED
    if "mle" in out:
        o = out["mle"]
        for i in np.nonzero(ok)[0]:
            try:
                m = mle(values[i], fam, dt=cfg.dt)
            except ErgomomError:
                o["flags"][i] |= FAILED
                continue
            o["estimate"][i] = m.gamma
            o["value"][i] = o["gamma"][i] = rt * (m.gamma - cfg.gamma_true)
            if m.boundary:
                o["flags"][i] |= BOUNDARY
    return out


def summarize(values, oracle_var: float, edgeworth: EdgeworthDensity | None = None) -> dict:
    """Mean, variance, third k-statistic and KS distances of one column;
    non-finite entries (errored replicates) are excluded."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    out = {"n": int(x.size), "mean": None, "var": None, "k3": None,
           "KS_normal": None, "KS_edgeworth": None}
    if x.size < 3:
        return out
    out["mean"] = float(np.mean(x))
    out["var"] = float(np.var(x, ddof=1))
    out["k3"] = float(stats.kstat(x - x[0], 3))
    if oracle_var and np.isfinite(oracle_var) and oracle_var > 0:
        out["KS_normal"] = float(stats.kstest(x, stats.norm(scale=np.sqrt(oracle_var)).cdf).statistic)
    if edgeworth is not None:
        out["KS_edgeworth"] = float(stats.kstest(x, edgeworth.cdf).statistic)
    return out


@dataclass(eq=False)
class StudyResult:
    """Standardized replicate values per ``(T, estimator)``.

    ``values[T][est]`` holds ``sqrt(T)(est - truth)`` for the moment
    (``mle``: for gamma); ``gamma_values`` holds ``sqrt(T)(gamma~ - gamma)``
    for the one-step estimator.
    """

    config: StudyConfig
    oracles: dict
    values: dict
    gamma_values: dict
    estimates: dict
    flags: dict
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def n_errored(self) -> int:
        n = 0
        for T in self.flags:
            bad = np.zeros(self.config.replicates, dtype=bool)
            for arr in self.flags[T].values():
                bad |= (arr & _ERROR_BITS) != 0
            n += int(bad.sum())
        return n

    @property
    def error_fraction(self) -> float:
        return self.n_errored / (self.config.replicates * len(self.config.T_list))

    def summary_json(self) -> str:
        doc = {"config": self.config.identity(), "oracles": self.oracles,
               "summary": self.summary, "provenance": self.provenance,
               "errors": {"errored_replicates": self.n_errored,
                          "error_fraction": self.error_fraction,
                          "counts": self.flag_counts()}}
        return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"

    def flag_counts(self) -> dict:
        names = {"BlowUp": BLOWUP, "Clamped": CLAMPED, "Failed": FAILED,
                 "BoundaryMaximum": BOUNDARY}
        return {_tkey(T): {est: {k: int(np.sum((a & b) != 0)) for k, b in names.items()}
                           for est, a in per.items()}
                for T, per in self.flags.items()}


def _tkey(T) -> str:
    return f"{T:g}"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def compute_oracles(config: StudyConfig, law=None) -> dict:
    """Quadrature truths and asymptotic variances for the study's model."""
    fam = get_family(config.family)
    F = moment_function(config.F)
    model = fam.model(config.gamma_true)
    law = law or build_law(model, fields=(F,), breakpoints=F.breakpoints)
    theta = stationary_moment(law, F)
    bound = build_bound(law, F)
    _, tdot, info = _moment_quantities(fam, config.gamma_true, F)
    try:
        c3 = skewness_coefficient(law, F)
    except NotInClassC as exc:
        log.warning("no Edgeworth coefficient: %s", exc)
        c3 = None
    return {"theta": theta, "avar_nonparametric": bound.avar, "theta_dot": tdot,
            "fisher_info": info, "avar_parametric": tdot**2 / info if info > 0 else None,
            "avar_gamma": 1.0 / info if info > 0 else None, "c3": c3,
            "degenerate": bound.degenerate}


def _oracle_var(oracles, est):
    return {"empirical": oracles["avar_nonparametric"], "one_step": oracles["avar_parametric"],
            "mle": oracles["avar_gamma"]}[est]


def recompute_summary(result: StudyResult) -> dict:
    """Summaries as a pure function of the stored arrays."""
    o = result.oracles
    out = {}
    for T, per in result.values.items():
        row = {}
        for est, vals in per.items():
            ew = None
            if est == "empirical" and o["c3"] is not None and o["avar_nonparametric"] > 0:
                ew = EdgeworthDensity(o["avar_nonparametric"], o["c3"], T)
            row[est] = summarize(vals, _oracle_var(o, est), ew)
            if est == "one_step":
                row["one_step_gamma"] = summarize(result.gamma_values[T][est], o["avar_gamma"])
        out[_tkey(T)] = row
    return out


def run_study(config: StudyConfig, threads: int | None = None, check: bool = True) -> StudyResult:
    """Run every (T, replicate) of ``config``; raises :class:`StudyFailure`
    (with the result attached as ``.result``) when more than 1% of replicates
    errored and ``check`` is set."""
    threads = threads or os.cpu_count() or 1
    fam = get_family(config.family)
    F = moment_function(config.F)
    model = fam.model(config.gamma_true)
    law = build_law(model, fields=(F,), breakpoints=F.breakpoints)
    oracles = compute_oracles(config, law)
    ctx = build_context(fam, F) if "one_step" in config.estimators else None
    state = _State(config, model, law, oracles["theta"], ctx)
    R = config.replicates
    tasks = [(i, T, s, min(s + CHUNK, R)) for i, T in enumerate(config.T_list)
             for s in range(0, R, CHUNK)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(state,)) as ex:
            chunks = list(ex.map(_chunk_in_worker, tasks))
    else:
        chunks = [_run_chunk(state, *t) for t in tasks]
    values, gvals, ests, flags = {}, {}, {}, {}
    for T in config.T_list:
        parts = [c for t, c in zip(tasks, chunks) if t[1] == T]
        values[T] = {e: np.concatenate([p[e]["value"] for p in parts]) for e in config.estimators}
        gvals[T] = {e: np.concatenate([p[e]["gamma"] for p in parts]) for e in config.estimators}
        ests[T] = {e: np.concatenate([p[e]["estimate"] for p in parts]) for e in config.estimators}
        flags[T] = {e: np.concatenate([p[e]["flags"] for p in parts]) for e in config.estimators}
    result = StudyResult(config, oracles, values, gvals, ests, flags)
    result.summary = recompute_summary(result)
    result.provenance = {"config_hash": config.hash(), "code_version": __version__,
                         "seeds": {"master_seed": config.master_seed,
                                   "stream": "Philox(SeedSequence(master_seed, spawn_key=(T_index, replicate)))"}}
    if check and result.error_fraction > MAX_ERROR_FRACTION:
        exc = StudyFailure(f"{result.n_errored} replicates errored "
                           f"({100 * result.error_fraction:.2f}% > 1%)")
        exc.result = result
        raise exc
    return result


# --- persistence ---------------------------------------------------------------

def write_replicates_csv(result: StudyResult, path) -> int:
    """One row per (T, estimator, replicate); returns the number of rows."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "estimator", "replicate", "standardized", "standardized_gamma",
                    "estimate", "flags"])
        for T in result.config.T_list:
            for est in result.config.estimators:
                v, g = result.values[T][est], result.gamma_values[T][est]
                e, fl = result.estimates[T][est], result.flags[T][est]
                for r in range(v.size):
                    w.writerow([_tkey(T), est, r, repr(float(v[r])), repr(float(g[r])),
                                repr(float(e[r])), int(fl[r])])
                    n += 1
    return n


def write_density_csv(result: StudyResult, path) -> None:
    """Normal, Edgeworth and histogram densities of the empirical estimator."""
    o = result.oracles
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "z", "normal_density", "edgeworth_density", "empirical_histogram_density"])
        if "empirical" not in result.config.estimators or o["c3"] is None or not o["avar_nonparametric"]:
            return
        for T in result.config.T_list:
            tab = density_table(EdgeworthDensity(o["avar_nonparametric"], o["c3"], T),
                                result.values[T]["empirical"])
            for i in range(tab["z"].size):
                w.writerow([_tkey(T)] + [repr(float(tab[k][i])) for k in
                                         ("z", "normal_density", "edgeworth_density",
                                          "empirical_histogram_density")])


def report(result: StudyResult, out_dir) -> dict:
    """Write ``summary.json``, ``replicates.csv``, ``density.csv`` and
    ``verdict.txt`` into ``out_dir``; returns their paths."""
    from .acceptance import study_verdict

    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / name for k, name in (("summary", "summary.json"),
                                            ("replicates", "replicates.csv"),
                                            ("density", "density.csv"),
                                            ("verdict", "verdict.txt"))}
    paths["summary"].write_text(result.summary_json(), encoding="utf-8")
    write_replicates_csv(result, paths["replicates"])
    write_density_csv(result, paths["density"])
    paths["verdict"].write_text(study_verdict(result), encoding="utf-8")
    return paths
