import csv
import json

import numpy as np
import pytest

from ergomom.acceptance import CRITERIA, study_verdict
from ergomom.exceptions import ConfigError
from ergomom.harness import (CHUNK, StudyConfig, recompute_summary, report, run_study,
                             summarize, write_replicates_csv)
from ergomom.simulate import replicate_rng

INI = """
[model]
family = ou
gamma_true = 1.0
F = x2

[simulation]
T_list = 5, 10
dt = 0.01
replicates = 100
master_seed = 7

[study]
estimators = empirical, one_step, mle
"""


@pytest.fixture(scope="module")
def cfg():
    return StudyConfig.from_string(INI)


@pytest.fixture(scope="module")
def result(cfg):
    return run_study(cfg, threads=1)


def test_config_parsing(cfg):
    assert cfg.T_list == (5.0, 10.0)
    assert cfg.estimators == ("empirical", "one_step", "mle")
    assert cfg.replicates == 100 and cfg.master_seed == 7


def test_config_round_trip(cfg):
    again = StudyConfig.from_string(cfg.to_ini())
    assert again == cfg and again.hash() == cfg.hash()
    assert StudyConfig.from_string(INI, master_seed=8).master_seed == 8
    # the output location does not change the identity
    assert cfg.replace(outputs="/tmp/x").hash() == cfg.hash()
    assert cfg.replace(master_seed=8).hash() != cfg.hash()


def test_config_file(tmp_path, cfg):
    p = tmp_path / "study.ini"
    p.write_text(cfg.to_ini())
    assert StudyConfig.from_file(p) == cfg


def test_config_without_section():
    assert StudyConfig.from_string("family = nonlinear\nF = x4\n").family == "nonlinear"


@pytest.mark.parametrize("text", [
    "[study]\nbogus = 1\n",
    "[study]\ngamma_true = 50\n",
    "[study]\nF = nosuch\n",
    "[study]\nT_list = 1.005\n",
    "[study]\nreplicates = 0\n",
    "[study]\nestimators = empirical, bayes\n",
    "[study]\nmaster_seed = -1\n",
    "[study]\nreplicates = many\n",
    "[study\nfamily = ou\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        StudyConfig.from_string(text)


def test_smoke_study(result, cfg):
    assert result.n_errored == 0
    for T in cfg.T_list:
        for est in cfg.estimators:
            assert result.values[T][est].shape == (100,)
            assert np.all(np.isfinite(result.values[T][est]))
    o = result.oracles
    assert o["theta"] == pytest.approx(0.5, rel=1e-9)
    assert o["avar_nonparametric"] == pytest.approx(0.5, rel=1e-9)
    assert o["avar_gamma"] == pytest.approx(2.0, rel=1e-8)
    assert o["c3"] == pytest.approx(0.5, rel=1e-8)
    e = result.estimates[10.0]["empirical"]
    assert np.allclose(result.values[10.0]["empirical"], np.sqrt(10) * (e - 0.5), rtol=1e-12)


def test_summary_is_recomputable(result):
    assert json.dumps(recompute_summary(result), sort_keys=True) == \
        json.dumps(result.summary, sort_keys=True)


def test_summary_json_round_trip(result):
    doc = json.loads(result.summary_json())
    assert doc["config"] == result.config.identity()
    assert doc["provenance"]["config_hash"] == result.config.hash()
    assert doc["errors"]["errored_replicates"] == 0
    s = doc["summary"]["10"]["empirical"]
    assert s["var"] == result.summary["10"]["empirical"]["var"]
    assert set(doc["summary"]["10"]) == {"empirical", "one_step", "one_step_gamma", "mle"}


def test_threads_do_not_change_results(cfg):
    small = cfg.replace(replicates=CHUNK + 20, T_list=(5.0,))
    a, b = run_study(small, threads=1), run_study(small, threads=2)
    for est in small.estimators:
        assert np.array_equal(a.values[5.0][est], b.values[5.0][est], equal_nan=True)
        assert np.array_equal(a.flags[5.0][est], b.flags[5.0][est])
    assert a.summary_json() == b.summary_json()


def test_prefix_stability(cfg):
    """Replicate r draws the same stream whatever the replicate count."""
    a = run_study(cfg.replace(replicates=30, T_list=(5.0,)), threads=1)
    b = run_study(cfg.replace(replicates=60, T_list=(5.0,)), threads=1)
    assert np.array_equal(a.values[5.0]["empirical"], b.values[5.0]["empirical"][:30])


def test_seed_streams_distinct():
    draws = {(i, r): replicate_rng(7, i, r).random(4).tobytes() for i in range(3) for r in range(50)}
    assert len(set(draws.values())) == len(draws)
    assert replicate_rng(7, 0, 3).random() == replicate_rng(7, 0, 3).random()
    assert replicate_rng(7, 0, 3).random() != replicate_rng(8, 0, 3).random()


def test_replicates_csv(tmp_path, result, cfg):
    n = write_replicates_csv(result, tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert n == len(rows) == cfg.replicates * len(cfg.T_list) * len(cfg.estimators)
    first = [r for r in rows if r["T"] == "10" and r["estimator"] == "empirical"]
    got = np.array([float(r["standardized"]) for r in first])
    assert np.array_equal(got, result.values[10.0]["empirical"])


def test_report_files(tmp_path, result):
    paths = report(result, tmp_path / "out")
    assert {p.name for p in paths.values()} == {"summary.json", "replicates.csv",
                                                "density.csv", "verdict.txt"}
    with open(paths["density"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {r["T"] for r in rows} == {"5", "10"}


def test_verdict_lists_each_criterion_once(result):
    lines = study_verdict(result).strip().splitlines()[1:]
    numbers = [int(line.split("|")[0]) for line in lines]
    assert numbers == sorted(CRITERIA)
    # a 100-replicate study at T = 5, 10 cannot decide criteria 5 or 6
    assert "NOT EVALUATED" in lines[4] and "NOT EVALUATED" in lines[5]


def test_summarize_excludes_nonfinite():
    x = np.random.default_rng(3).normal(0, 1, 400)
    y = np.concatenate([x, [np.nan, np.inf]])
    a, b = summarize(x, 1.0), summarize(y, 1.0)
    assert b["n"] == 400 and a == b
    assert summarize([1.0, np.nan], 1.0)["var"] is None
