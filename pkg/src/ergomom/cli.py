"""Command-line interface: ``ergomom <command> [options]``.

Commands: simulate, estimate, bound, edgeworth, study, verify.  Every command
accepts ``--config``, ``--seed``, ``--threads`` and ``--out``; explicit flags
override values from the config file.  The exit code is 0 iff every
requested check passed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .edgeworth import EdgeworthDensity, density_table, skewness_coefficient
from .exceptions import ErgomomError, StudyFailure
from .harness import StudyConfig, report, run_study
from .invariant import build_law
from .model import get_family, moment_function
from .nonparam import build_bound
from .param import get_context, mle, one_step
from .simulate import SimConfig, read_path_csv, simulate_path, write_path_csv

log = logging.getLogger("ergomom")


def _common(p):
    p.add_argument("--config", help="INI file with study settings")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    p.add_argument("--out", help="output file or directory")


def _model_args(p, T=True):
    p.add_argument("--family", help="ou or nonlinear")
    p.add_argument("--gamma", type=float, help="drift parameter")
    p.add_argument("--F", dest="F", help="moment function: x, x2, x4, indicator(x0), ...")
    p.add_argument("--dt", type=float)
    if T:
        p.add_argument("--T", type=float, help="observation horizon")


def _settings(args) -> dict:
    """Merge config file values with command-line flags."""
    s = {"family": "ou", "gamma_true": 1.0, "F": "x2", "dt": 0.01, "T": 100.0, "seed": 0}
    if args.config:
        cfg = StudyConfig.from_file(args.config)
        s.update(family=cfg.family, gamma_true=cfg.gamma_true, F=cfg.F, dt=cfg.dt,
                 T=cfg.T_list[0], seed=cfg.master_seed)
    for key, attr in (("family", "family"), ("gamma_true", "gamma"), ("F", "F"),
                      ("dt", "dt"), ("T", "T"), ("seed", "seed")):
        val = getattr(args, attr, None)
        if val is not None:
            s[key] = val
    return s


def _emit(text: str, out):
    if out:
        FsPath(out).parent.mkdir(parents=True, exist_ok=True)
        FsPath(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (float, np.floating)):
            v = float(v)
            return v if np.isfinite(v) else None
        if isinstance(v, np.bool_):
            return bool(v)
        return v
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def cmd_simulate(args) -> int:
    s = _settings(args)
    fam = get_family(s["family"])
    model = fam.model(s["gamma_true"])
    init = "stationary" if args.init is None else float(args.init)
    cfg = SimConfig(T=s["T"], dt=s["dt"], init=init, seed=s["seed"], scheme=args.scheme)
    law = build_law(model) if init == "stationary" else None
    path = simulate_path(model, cfg, law=law)
    out = args.out
    if out and FsPath(out).is_dir():
        out = str(FsPath(out) / "path.csv")
    if out:
        write_path_csv(path, out)
    else:
        write_path_csv(path, sys.stdout)
    return 0


def cmd_estimate(args) -> int:
    s = _settings(args)
    path = read_path_csv(args.path)
    ctx = get_context(s["family"], s["F"])
    r = one_step(path, ctx)
    m = mle(path, get_family(s["family"]))
    flags = list(r.flags) + (["BoundaryMaximum"] if m.boundary else [])
    doc = {"theta_star": r.theta_star, "gamma_star": r.gamma_star,
           "gamma_tilde": r.gamma_tilde, "theta_tilde": r.theta_tilde,
           "gamma_mle": m.gamma, "flags": flags}
    _emit(_json(doc), args.out)
    return 0


def cmd_bound(args) -> int:
    s = _settings(args)
    model = get_family(s["family"]).model(s["gamma_true"])
    F = moment_function(s["F"])
    law = build_law(model, fields=(F,), breakpoints=F.breakpoints)
    b = build_bound(law, F)
    doc = {"theta": b.theta, "info": None if b.degenerate else b.info, "avar": b.avar,
           "flags": ["DegenerateF"] if b.degenerate else []}
    _emit(_json(doc), args.out)
    if args.csv:
        x = b.law.grid.unique_nodes()
        g = b.law.grid
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "M", "Q", "H"])
            for row in zip(x, g.unique_values(b.M_nodes), g.unique_values(b.Q_nodes),
                           g.unique_values(b.H_nodes)):
                w.writerow([repr(float(v)) for v in row])
    if args.law_csv:
        g = law.grid
        with open(args.law_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "density", "cdf"])
            for row in zip(g.unique_nodes(), g.unique_values(law.f), g.unique_values(law.cdf_nodes)):
                w.writerow([repr(float(v)) for v in row])
    return 0


def cmd_edgeworth(args) -> int:
    s = _settings(args)
    model = get_family(s["family"]).model(s["gamma_true"])
    F = moment_function(s["F"])
    law = build_law(model, fields=(F,), breakpoints=F.breakpoints)
    b = build_bound(law, F)
    coefs = EdgeworthDensity(b.avar, skewness_coefficient(law, F), s["T"])
    values = None
    if args.replicates:
        cfg = StudyConfig(family=s["family"], gamma_true=s["gamma_true"], F=s["F"],
                          T_list=(s["T"],), dt=s["dt"], replicates=args.replicates,
                          master_seed=s["seed"], estimators=("empirical",))
        values = run_study(cfg, threads=args.threads).values[s["T"]]["empirical"]
    tab = density_table(coefs, values)
    cols = ["z", "normal_density", "edgeworth_density", "empirical_histogram_density"]
    lines = [",".join(cols)]
    for i in range(tab["z"].size):
        lines.append(",".join(repr(float(tab[c][i])) if c in tab else "" for c in cols))
    out = args.out
    if out and FsPath(out).is_dir():
        out = str(FsPath(out) / "density.csv")
    _emit("\n".join(lines) + "\n", out)
    if not coefs.positive_on(tab["z"]):
        log.warning("Edgeworth density is negative somewhere on the plotted range")
    return 0


def cmd_study(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out:
        overrides["outputs"] = args.out
    cfg = StudyConfig.from_file(args.config, **overrides) if args.config else StudyConfig(**overrides)
    out = cfg.outputs or "study_output"
    code = 0
    try:
        result = run_study(cfg, threads=args.threads)
    except StudyFailure as exc:
        log.error("%s", exc)
        result, code = exc.result, 1
    paths = report(result, out)
    verdict = paths["verdict"].read_text(encoding="utf-8")
    sys.stdout.write(verdict)
    if "| FAIL |" in verdict:
        code = 1
    return code


def cmd_verify(args) -> int:
    from .acceptance import DEFAULT_SEED, run_criteria

    numbers = None
    if args.criteria:
        numbers = [int(c) for c in args.criteria.replace(" ", "").split(",") if c]
    seed = DEFAULT_SEED if args.seed is None else args.seed
    results = run_criteria(numbers, seed=seed, threads=args.threads,
                           echo=lambda line: print(line, flush=True))
    if args.out:
        text = "\n".join(r.line() for r in results) + "\n"
        out = FsPath(args.out)
        if out.suffix == "":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "verdict.txt"
        out.write_text(text, encoding="utf-8")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergomom", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="write one path as CSV")
    _common(sp)
    _model_args(sp)
    sp.add_argument("--init", help="starting point (default: stationary draw)")
    sp.add_argument("--scheme", default="euler", choices=("euler", "milstein"))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="estimators for one path CSV, as JSON")
    _common(sp)
    _model_args(sp, T=False)
    sp.add_argument("path", help="path CSV written by `simulate`")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("bound", help="efficiency bound of a model and F, as JSON")
    _common(sp)
    _model_args(sp, T=False)
    sp.add_argument("--csv", help="also dump x, M, Q, H to this CSV file")
    sp.add_argument("--law-csv", help="also dump the invariant law (x, density, cdf)")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("edgeworth", help="normal and Edgeworth densities as CSV")
    _common(sp)
    _model_args(sp)
    sp.add_argument("--replicates", type=int, default=0,
                    help="add a histogram from this many simulated replicates")
    sp.set_defaults(func=cmd_edgeworth)

    sp = sub.add_parser("study", help="full Monte Carlo study")
    _common(sp)
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("verify", help="run the acceptance criteria")
    _common(sp)
    sp.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,3")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ErgomomError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
