import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from ergomom.exceptions import NonPositiveSigma, TailDivergence
from ergomom.invariant import (build_law, check_ergodicity, normalizer, sample_stationary,
                               stationary_moment)
from ergomom.model import DiffusionModel, ScalarField, moment_function


def _model(S, sigma=lambda x: np.ones_like(x), name="m"):
    return DiffusionModel(ScalarField(S, growth=(1.0, 1.0)),
                          ScalarField(sigma, growth=(1.0, 0.0)), name=name)


def test_ergodicity_ou(ou):
    assert check_ergodicity(ou.model(1.0))


def test_ergodicity_explosive_and_brownian():
    assert not check_ergodicity(_model(lambda x: x))
    assert not check_ergodicity(_model(lambda x: np.zeros_like(x)))


def test_ergodicity_rejects_nonpositive_sigma():
    with pytest.raises(NonPositiveSigma):
        check_ergodicity(_model(lambda x: -x, sigma=lambda x: x))


@pytest.mark.parametrize("gamma,expected", [(1.0, np.sqrt(np.pi)), (0.5, np.sqrt(2 * np.pi))])
def test_normalizer_gaussian_integral(ou, gamma, expected):
    assert normalizer(ou.model(gamma)) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(gamma=st.floats(0.1, 10.0))
def test_normalizer_ou_any_gamma(ou, gamma):
    assert normalizer(ou.model(gamma)) == pytest.approx(np.sqrt(np.pi / gamma), rel=1e-9)


def test_law_point_values(ou_law):
    assert ou_law.density(0.0) == pytest.approx(1 / np.sqrt(np.pi), rel=1e-10)
    assert ou_law.cdf(0.0) == pytest.approx(0.5, abs=1e-12)
    assert abs(ou_law.quantile(0.5)) < 1e-8


def test_law_has_enough_nodes(ou_law):
    assert ou_law.grid.unique_nodes().size >= 2048


@pytest.mark.parametrize("F,expected,tol", [("x2", 0.5, 1e-9), ("x", 0.0, 1e-9), ("x4", 0.75, 1e-9)])
def test_stationary_moment_ou(ou_law, F, expected, tol):
    assert stationary_moment(ou_law, moment_function(F)) == pytest.approx(expected, abs=tol)


def test_stationary_moment_nonlinear_matches_scipy(nonlinear, nl_law):
    ref = oracles.QuadLaw(lambda x: nonlinear.S(1.0, x), nonlinear.sigma)
    for name in ("x2", "x4", "indicator(0.3)"):
        F = moment_function(name)
        assert stationary_moment(nl_law, F) == pytest.approx(ref.expect(F), rel=1e-9, abs=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_stationary_moment_tail_divergence(ou_law):
    F = ScalarField(lambda x: np.exp(1.2 * x**2), name="exp", growth=(1.0, 50.0))
    with pytest.raises(TailDivergence):
        stationary_moment(ou_law, F)


def test_density_integrates_to_one(ou_law, nl_law):
    for law in (ou_law, nl_law):
        mass = law.expect(np.ones(law.grid.shape))
        assert 1 - 2 * law.domain.tail_tol <= mass <= 1 + 1e-9
        assert law.cdf(law.grid.hi) - law.cdf(law.grid.lo) >= 1 - 2 * law.domain.tail_tol


def test_cdf_monotone_and_quantile_round_trip(ou_law, nl_law):
    for law in (ou_law, nl_law):
        x = law.grid.unique_nodes()
        c = law.cdf(x)
        assert np.all(np.diff(c) >= 0)
        inner = (c > 1e-10) & (c < 1 - 1e-10)
        # rounding of c itself moves x by about eps / f(x)
        f = law.grid.unique_values(law.f)[inner]
        tol = 1e-8 + 4 * np.finfo(float).eps / f
        assert np.all(np.abs(law.quantile(c[inner]) - x[inner]) < tol)


def test_density_identity_on_grid(ou_law, nl_law):
    # G sigma^2 p f = 1
    for law in (ou_law, nl_law):
        x = law.grid.nodes
        ident = law.G * law.sigma_nodes**2 * np.exp(-law.phi) * law.f
        mask = law.f > 1e-250
        assert np.max(np.abs(ident[mask] - 1)) < 1e-9


def test_density_against_scipy_quad(nonlinear, nl_law, rng):
    ref = oracles.QuadLaw(lambda x: nonlinear.S(1.0, x), nonlinear.sigma)
    for x in rng.uniform(-2.5, 2.5, 20):
        assert nl_law.density(x) == pytest.approx(ref.f(x), rel=1e-9)


@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_ou_density_is_gaussian(ou, gamma):
    law = build_law(ou.model(gamma))
    x = law.grid.unique_nodes()
    exact = stats.norm.pdf(x, scale=np.sqrt(0.5 / gamma))
    assert np.max(np.abs(law.grid.unique_values(law.f) - exact)) < 1e-8


def test_stationary_sampling(ou_law):
    draws = sample_stationary(ou_law, np.random.default_rng(5), 100_000)
    assert abs(draws.mean()) < 0.01
    assert stats.kstest(draws, ou_law.cdf).statistic < 0.01


def test_quantile_is_clamped(ou_law):
    for u in (1e-9, 1e-300, 0.0, 1.0):
        v = ou_law.quantile(u)
        assert np.isfinite(v) and ou_law.grid.lo <= v <= ou_law.grid.hi


def test_sampling_deterministic(ou_law):
    a = sample_stationary(ou_law, np.random.default_rng(9), 10)
    b = sample_stationary(ou_law, np.random.default_rng(9), 10)
    assert np.array_equal(a, b)


def test_running_mass_has_zero_total(ou_law, nl_law):
    for law in (ou_law, nl_law):
        q = law.grid.evaluate(lambda x: x**2, one_sided=True)
        q = q - law.expect(q)
        run = law.running_mass(q)
        assert abs(run[0, 0]) < 1e-12 and abs(run[-1, -1]) < 1e-12
