import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import batch
from ergomom.exceptions import BlowUp, NonPositiveSigma
from ergomom.model import DiffusionModel, Path, ScalarField, constant, power
from ergomom.simulate import (SimConfig, brownian_increments, coarsen_increments,
                              integrate_increments, ito_integral, read_path_csv,
                              replicate_rng, simulate_path, time_integral, write_path_csv)


def _const_model(S, sigma):
    return DiffusionModel(ScalarField(S, growth=(1.0, 3.0)), ScalarField(sigma), name="c")


def test_ou_path_time_average(ou, ou_law):
    p = simulate_path(ou.model(1.0), SimConfig(T=100, dt=0.01, seed=11), law=ou_law)
    assert p.T == pytest.approx(100.0)
    assert abs(time_integral(p, power(2)) / p.T - 0.5) < 0.15


def test_degenerate_ode_stays_put():
    m = _const_model(lambda x: np.zeros_like(x), lambda x: np.zeros_like(x))
    p = simulate_path(m, SimConfig(T=1, dt=0.01, init=2.5))
    assert np.all(p.values == 2.5)


def test_same_seed_same_path(ou, ou_law):
    cfg = SimConfig(T=5, dt=0.01, seed=42)
    a = simulate_path(ou.model(1.0), cfg, law=ou_law)
    b = simulate_path(ou.model(1.0), cfg, law=ou_law)
    assert np.array_equal(a.values, b.values)
    c = simulate_path(ou.model(1.0), SimConfig(T=5, dt=0.01, seed=43), law=ou_law)
    assert not np.array_equal(a.values, c.values)


def test_time_integral_constants():
    p = Path(0.01, np.full(1001, 1.7))
    assert time_integral(p, constant(1.0)) == pytest.approx(10.0, rel=1e-13)
    assert time_integral(p, power(2)) == pytest.approx(10.0 * 1.7**2, rel=1e-13)


def test_time_integral_trapezoid():
    p = Path(0.5, np.array([0.0, 1.0, 2.0]))
    assert time_integral(p, power(1)) == pytest.approx(0.5 * (0.5 + 1.5))


def test_ito_integral_zero_and_brownian(ou):
    model = ou.model(1.0)
    x = batch(ou, 1.0, 2000, 10.0, seed=3)
    assert np.all(ito_integral(x, model, constant(0.0), 0.01) == 0.0)
    W = ito_integral(x, model, constant(1.0), 0.01)
    assert np.var(W, ddof=1) == pytest.approx(10.0, rel=0.10)
    I = ito_integral(x, model, power(1), 0.01)
    # E[xi^2] = 1/2
    assert abs(I.mean()) < 3 * np.sqrt(0.5 * 10.0 / 2000)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_ito_integral_linear(ou, a, b):
    model = ou.model(1.0)
    p = simulate_path(model, SimConfig(T=2, dt=0.01, init=0.3, seed=1))
    g1, g2 = power(1), power(3)
    both = ScalarField(lambda x: a * g1(x) + b * g2(x))
    lhs = ito_integral(p, model, both)
    rhs = a * ito_integral(p, model, g1) + b * ito_integral(p, model, g2)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_brownian_increments_recover_noise(nonlinear):
    model = nonlinear.model(1.0)
    dW = replicate_rng(4).standard_normal(500) * 0.1
    x = integrate_increments(model, 0.2, dW, 0.01)
    assert np.allclose(brownian_increments(x, model, 0.01), dW, atol=1e-12)


def test_brownian_increments_need_positive_sigma():
    m = _const_model(lambda x: -x, lambda x: np.zeros_like(x))
    with pytest.raises(NonPositiveSigma):
        brownian_increments(np.array([0.0, 0.1, 0.2]), m, 0.01)


def test_scheme_consistency(ou):
    # same Brownian path on dt = 0.01 and on dt = 0.02
    model = ou.model(1.0)
    rng = replicate_rng(8)
    R, T, dt = 200, 10.0, 0.01
    x0 = rng.normal(0, np.sqrt(0.5), R)
    dW = rng.standard_normal((R, int(T / dt))) * np.sqrt(dt)
    fine = integrate_increments(model, x0, dW, dt)
    coarse = integrate_increments(model, x0, coarsen_increments(dW), 2 * dt)
    drift = np.mean(time_integral(fine, power(2), dt) - time_integral(coarse, power(2), 2 * dt)) / T
    assert abs(drift) < 5 * dt


def test_milstein_equals_euler_for_constant_sigma(ou, ou_law):
    e = simulate_path(ou.model(1.0), SimConfig(T=2, dt=0.01, seed=5), law=ou_law)
    m = simulate_path(ou.model(1.0), SimConfig(T=2, dt=0.01, seed=5, scheme="milstein"), law=ou_law)
    assert np.array_equal(e.values, m.values)


def test_milstein_differs_for_nonlinear_sigma(nonlinear):
    model = nonlinear.model(1.0)
    e = simulate_path(model, SimConfig(T=2, dt=0.01, init=0.5, seed=5))
    m = simulate_path(model, SimConfig(T=2, dt=0.01, init=0.5, seed=5, scheme="milstein"))
    assert not np.array_equal(e.values, m.values)
    assert np.max(np.abs(e.values - m.values)) < 0.05


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_step():
    m = _const_model(lambda x: x**3, lambda x: np.ones_like(x))
    with pytest.raises(BlowUp) as info:
        simulate_path(m, SimConfig(T=5, dt=0.01, init=3.0))
    assert info.value.step > 0


def test_config_guards():
    with pytest.raises(ValueError):
        SimConfig(T=1, dt=0.1)
    with pytest.raises(ValueError):
        SimConfig(T=-1)
    with pytest.raises(ValueError):
        SimConfig(T=1, scheme="rk4")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        cfg = SimConfig(T=1.005, dt=0.01)
    assert w and cfg.n_steps == 100


def test_csv_round_trip(ou, ou_law):
    p = simulate_path(ou.model(1.0), SimConfig(T=1, dt=0.01, seed=2), law=ou_law)
    buf = io.StringIO()
    write_path_csv(p, buf)
    assert buf.getvalue().startswith("dt,0.01\n")
    q = read_path_csv(io.StringIO(buf.getvalue()))
    assert q.dt == p.dt and np.array_equal(q.values, p.values)


def test_replicate_streams_distinct():
    first = {replicate_rng(123, 0, r).integers(0, 2**63) for r in range(2000)}
    assert len(first) == 2000
    assert replicate_rng(1, 5).random() != replicate_rng(2, 5).random()
