import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

import oracles
from conftest import batch
from ergomom.edgeworth import (EdgeworthDensity, bracket, cumulant_density, density_table,
                               edgeworth_cdf, edgeworth_density, hermite, mc_cumulants,
                               normal_pdf, skewness_coefficient, variance_coefficient)
from ergomom.exceptions import InsufficientReplicates, NotInClassC
from ergomom.invariant import build_law
from ergomom.model import ScalarField, get_family, moment_function
from ergomom.nonparam import build_bound


def test_bracket_of_q_is_minus_Q(ou_law):
    bq = bracket(ou_law, "x2")
    Q = build_bound(ou_law, "x2").Q_nodes
    assert np.max(np.abs(bq.bracket_nodes + Q)) < 1e-6
    assert abs(bq.mean - 0.5) < 1e-12


def test_bracket_of_zero(ou_law):
    b = bracket(ou_law, np.zeros(ou_law.grid.shape))
    assert np.all(b.bracket_nodes == 0) and np.all(b.G_nodes == 0)


def test_bracket_parity(ou_law):
    b = bracket(ou_law, "x")  # odd a, symmetric law
    x = ou_law.quantile(np.linspace(0.55, 0.95, 15))
    assert np.allclose(b.bracket(x), b.bracket(-x), rtol=1e-9, atol=1e-12)
    even = bracket(ou_law, "x2")
    assert np.allclose(even.bracket(x), -even.bracket(-x), rtol=1e-9, atol=1e-12)


@settings(max_examples=12, deadline=None)
@given(fam=st.sampled_from(["ou", "nonlinear"]), gamma=st.sampled_from([0.1, 1.0, 10.0]),
       F=st.sampled_from(["x", "x2", "x4", "indicator(0.3)"]))
def test_bracket_definition_and_centering(fam, gamma, F):
    law = build_law(get_family(fam).model(gamma))
    b = bracket(law, F)
    assert abs(b.law.expect(b.a_nodes)) < 1e-9 * max(1.0, abs(b.mean))
    assert b.cross_check() < 1e-8
    # simplified form: -(2 / (sigma f)) int_{-inf}^x a f
    x = b.law.quantile(np.linspace(0.05, 0.95, 20))
    direct = -2 * b.law.grid.interpolate(b.running, x) / (b.law.model.sigma(x) * b.law.density(x))
    assert np.allclose(b.bracket(x), direct, rtol=1e-8, atol=1e-12)


def test_bracket_against_scipy_quad(nonlinear, nl_law):
    ref = oracles.QuadLaw(lambda x: nonlinear.S(1.0, x), nonlinear.sigma)
    b = bracket(nl_law, "x4")
    F = moment_function("x4")
    for x in (-1.5, -0.2, 0.9, 2.0):
        assert b.bracket(x) == pytest.approx(-ref.Q(F, x), rel=1e-7)


def test_class_c_checks(ou_law):
    b = bracket(ou_law, "x2")
    assert b.class_c["centered"] and b.class_c["bracket_growth"] and b.class_c["G_growth"]
    # integrable under f ~ exp(-x^2), but [a] grows like exp(0.6 x^2)
    wild = ScalarField(lambda x: np.exp(0.6 * x**2), name="wild", growth=(1.0, 50.0))
    with pytest.raises(NotInClassC):
        bracket(ou_law, wild)


@pytest.mark.parametrize("F,expected", [("x2", 0.5), ("x", 1.0)])
def test_variance_coefficient(ou_law, F, expected):
    assert variance_coefficient(ou_law, F) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_skewness_coefficient_x2(ou, gamma):
    law = build_law(ou.model(gamma))
    c3 = skewness_coefficient(law, "x2")
    assert c3 == pytest.approx(0.5 / gamma**5, rel=1e-8)
    assert c3 == pytest.approx(oracles.ou_skewness_coefficient(2, gamma), rel=1e-8)


def test_skewness_coefficient_x4(ou_law):
    expected = oracles.ou_skewness_coefficient(4, rtol=1e-8)
    assert skewness_coefficient(ou_law, "x4") == pytest.approx(expected, rel=1e-7)


def test_skewness_coefficient_zero_cases(ou_law):
    assert abs(skewness_coefficient(ou_law, "x")) < 1e-8
    assert skewness_coefficient(ou_law, "const(4)") == 0.0


def test_exact_chain_cumulants_approach_c3(ou_law):
    """Exact cumulants of the discretized time average approach the
    coefficients of the expansion as T grows."""
    c3 = skewness_coefficient(ou_law, "x2")
    scaled = []
    for T in (25.0, 50.0):
        _, k2, k3 = oracles.euler_ou_cumulants(T, dt=0.02)
        scaled.append(k3 * np.sqrt(T) / 3)
        assert k2 == pytest.approx(0.5, abs=0.01)
    assert abs(scaled[1] - c3) < abs(scaled[0] - c3) < 0.02
    assert abs(scaled[1] - c3) < 0.01


def test_mc_cumulants_match_exact_chain(ou):
    """Third and second k-statistics of sqrt(T)(theta* - theta) at T = 25
    against the exact Gaussian quadratic-form cumulants of the same chain."""
    T, dt, R = 25.0, 0.01, 20000
    x = batch(ou, 1.0, R, T, dt=dt, seed=2718)
    trap = dt * (np.sum(x**2, axis=1) - 0.5 * (x[:, 0] ** 2 + x[:, -1] ** 2))
    z = np.sqrt(T) * (trap / T - 0.5)
    _, k2, k3 = oracles.euler_ou_cumulants(T, dt)
    got = mc_cumulants(z)
    parts = np.array_split(z, 20)
    se3 = np.std([stats.kstat(p, 3) for p in parts], ddof=1) / np.sqrt(20)
    se2 = np.std([stats.kstat(p, 2) for p in parts], ddof=1) / np.sqrt(20)
    assert abs(got["k3"] - k3) < 4 * se3
    assert abs(got["k2"] - k2) < 4 * se2


def test_hermite_examples():
    assert hermite(3, 0.0, 2.7) == 0.0
    assert np.all(hermite(0, np.linspace(-3, 3, 7), 0.4) == 1.0)
    assert hermite(3, 1.0, 1.0) == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        hermite(5, 0.0)
    with pytest.raises(ValueError):
        hermite(1, 0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(0, 4), z=st.floats(-4, 4), S=st.floats(0.2, 5.0))
def test_hermite_against_numpy(k, z, S):
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    ref = S ** (-k / 2) * np.polynomial.hermite_e.hermeval(z / np.sqrt(S), coef)
    assert hermite(k, z, S) == pytest.approx(ref, rel=1e-10, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 3), z=st.floats(-3, 3), S=st.floats(0.3, 3.0))
def test_hermite_against_finite_differences(k, z, S):
    h = 1e-3 * np.sqrt(S)
    offs = {1: [-1, 1], 2: [-1, 0, 1], 3: [-2, -1, 1, 2]}[k]
    wts = {1: [-0.5, 0.5], 2: [1, -2, 1], 3: [-0.5, 1, -1, 0.5]}[k]
    deriv = sum(w * normal_pdf(z + o * h, S) for o, w in zip(offs, wts)) / h**k
    ref = (-1) ** k * deriv / normal_pdf(z, S)
    assert hermite(k, z, S) == pytest.approx(ref, rel=1e-4, abs=1e-4 / S**k)


def test_edgeworth_density_properties():
    d0 = EdgeworthDensity(0.5, 0.0, 25.0)
    z = np.linspace(-3, 3, 31)
    assert np.array_equal(d0.pdf(z), normal_pdf(z, 0.5))
    d = EdgeworthDensity(0.5, 0.5, 25.0)
    assert integrate.quad(d.pdf, -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-6)
    for zz in (-1.0, 0.0, 0.7):
        assert d.cdf(zz) == pytest.approx(integrate.quad(d.pdf, -np.inf, zz)[0], abs=1e-9)
    # |c h_3| < 1 near the centre; the guard trips in the tails
    assert d.positive_on(np.linspace(-1, 1, 21))
    assert not d.positive_on(np.array([-2.0]))
    assert edgeworth_density(d)(0.3) == d.pdf(0.3) and edgeworth_cdf(d)(0.3) == d.cdf(0.3)


@settings(max_examples=30, deadline=None)
@given(S=st.floats(0.1, 5), c3=st.floats(-3, 3), T=st.floats(1, 1000), z=st.floats(-4, 4))
def test_two_density_forms_coincide(S, c3, T, z):
    d = EdgeworthDensity(S, c3, T)
    k3 = 3 * c3 / np.sqrt(T)
    assert cumulant_density(S, k3)(z) == pytest.approx(d.pdf(z), rel=1e-12, abs=1e-300)
    alt = EdgeworthDensity.from_cumulants(S, k3, T)
    assert alt.c3 == pytest.approx(c3, rel=1e-12, abs=1e-15)


def test_mc_cumulants_normal_sample():
    x = np.random.default_rng(1).standard_normal(100_000)
    k = mc_cumulants(x)
    assert abs(k["k3"]) < 3 * np.sqrt(6 / x.size)
    assert k["n"] == x.size


def test_mc_cumulants_constant_and_small():
    k = mc_cumulants(np.full(2000, 3.3))
    assert k["k2"] == 0.0 and k["k3"] == 0.0
    with pytest.raises(InsufficientReplicates):
        mc_cumulants(np.zeros(999))


def _kstats(x):
    n = x.size
    m = x - x.mean()
    m2, m3 = np.mean(m**2), np.mean(m**3)
    return n / (n - 1) * m2, n**2 / ((n - 1) * (n - 2)) * m3


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-1e3, 1e3), seed=st.integers(0, 2**32 - 1))
def test_mc_cumulants_shift_invariant(c, seed):
    x = np.random.default_rng(seed).gamma(2.0, size=1500)
    a, b = mc_cumulants(x), mc_cumulants(x + c)
    k2, k3 = _kstats(x)
    assert a["k2"] == pytest.approx(k2, rel=1e-10)
    assert a["k3"] == pytest.approx(k3, rel=1e-9)
    assert b["k2"] == pytest.approx(a["k2"], rel=1e-8)
    assert b["k3"] == pytest.approx(a["k3"], rel=1e-6, abs=1e-9)


def test_density_table_columns():
    d = EdgeworthDensity(0.5, 0.5, 25.0)
    values = np.random.default_rng(0).normal(0, np.sqrt(0.5), 5000)
    tab = density_table(d, values)
    assert set(tab) == {"z", "normal_density", "edgeworth_density", "empirical_histogram_density"}
    h = tab["z"][1] - tab["z"][0]
    assert np.sum(tab["empirical_histogram_density"]) * h == pytest.approx(1.0, abs=0.01)
    assert "empirical_histogram_density" not in density_table(d)
