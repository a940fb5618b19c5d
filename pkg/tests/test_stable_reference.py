import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcmlab import ConductanceLaw, LatticeSpec, StableDensityEvaluator, generator, heat_kernel, sample_environment
from rcmlab.stable_reference import (_evaluator, llt_error, stable_density, stable_symbol_constant,
                                     symbol_constant_closed_form, symbol_constant_quadrature, wrap_bound)


def test_symbol_constant_one_dimensional_cauchy():
    assert abs(stable_symbol_constant(1, 1.0) - np.pi) <= 1e-7


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("alpha", [0.01, 0.5, 1.0, 1.5, 1.99])
def test_symbol_constant_closed_form(d, alpha):
    v, err = symbol_constant_quadrature(d, alpha)
    assert abs(v - symbol_constant_closed_form(d, alpha)) <= max(err, 1e-9 * v)


def test_symbol_constant_tolerance_halving():
    v1, e1 = symbol_constant_quadrature(2, 0.7, 1e-8)
    v2, _ = symbol_constant_quadrature(2, 0.7, 5e-9)
    assert abs(v1 - v2) < e1


@pytest.mark.parametrize("alpha", [0.0005, 1.9995, 2.0, 0.0])
def test_alpha_margin_refused(alpha):
    with pytest.raises(ValueError):
        symbol_constant_quadrature(1, alpha)


@pytest.fixture(scope="module")
def cauchy():
    return StableDensityEvaluator(a=1 / np.pi, alpha=1.0, d=1)


def test_cauchy_density(cauchy):
    x = np.linspace(-30, 30, 20)
    vals, beyond = stable_density(cauchy, 1.0, x)
    assert not beyond.any()
    assert np.max(np.abs(vals - 1 / (np.pi * (1 + x ** 2)))) <= 1e-6
    assert cauchy(1.0, 0.0)[0] == pytest.approx(1 / np.pi, abs=1e-6)


def test_density_mass(cauchy):
    assert abs(cauchy.total_mass() - 1) <= 1e-4
    ev = StableDensityEvaluator(a=1.0, alpha=1.5, d=1)
    assert abs(ev.total_mass() - 1) <= 1e-4


def test_two_dimensional_cauchy():
    c = stable_symbol_constant(2, 1.0)
    ev = StableDensityEvaluator(a=1 / c, alpha=1.0, d=2)  # symbol |xi|
    r = np.linspace(0, 40, 15)
    x = np.stack([r, np.zeros_like(r)], 1)
    vals, _ = stable_density(ev, 1.0, x)
    assert vals == pytest.approx(1 / (2 * np.pi * (1 + r ** 2) ** 1.5), rel=1e-6, abs=1e-10)


@given(st.floats(0.1, 50.0), st.floats(0.2, 5.0))
@settings(max_examples=30, deadline=None)
def test_symmetry_and_scaling(x, t):
    ev = _evaluator(0.8, 1.3, 1)
    a, _ = ev(t, np.array([x, -x]))
    assert a[0] == a[1]
    k1, _ = ev(1.0, np.array([x * t ** (-1 / 1.3)]))
    assert a[0] == pytest.approx(t ** (-1 / 1.3) * k1[0], rel=1e-12)


def test_tail_flag_beyond_table(cauchy):
    vals, beyond = cauchy(1.0, np.array([0.0, 5000.0]))
    assert not beyond[0] and beyond[1]
    assert vals[1] == pytest.approx(cauchy.tail(1.0, 5000.0), rel=1e-12)


def test_rejects_bad_inputs(cauchy):
    with pytest.raises(ValueError):
        cauchy(0.0, 1.0)
    with pytest.raises(ValueError):
        StableDensityEvaluator(a=-1.0, alpha=1.0)


# -- local limit ---------------------------------------------------------------------

def test_lattice_kernel_close_to_limit_at_n8():
    n, L = 8, 400
    spec = LatticeSpec(0, 1, L, boundary="torus", images=True)
    env = sample_environment(ConductanceLaw.constant(1.0), spec)
    p = heat_kernel(generator(env), float(n), env.sites.origin).values[env.sites.origin]
    ev = StableDensityEvaluator(a=1.0, alpha=1.0, d=1)
    k0 = float(ev(1.0, 0.0)[0])
    assert abs(n * p - k0) <= 0.5 * k0


def test_wrap_bound_shrinks_with_period():
    ev = StableDensityEvaluator(a=1.0, alpha=1.0, d=1)
    t = np.array([0.5, 2.0])
    x = np.linspace(-2, 2, 9)
    a = wrap_bound(ev, 50.0, t, x)
    b = wrap_bound(ev, 200.0, t, x)
    assert 0 < b < a


def test_llt_small_run_and_errors():
    law = ConductanceLaw.constant(1.0)
    rep = llt_error(law, [0], n_grid=(2, 4), n_t=2, x_step=0.5)
    assert rep.errors.shape == (2, 1) and np.all(rep.errors > 0)
    with pytest.raises(NotImplementedError):
        llt_error(law, [0], d=2)
    with pytest.raises(ValueError):
        llt_error(ConductanceLaw.bernoulli_degenerate(0.2), [0])
    with pytest.raises(ValueError, match="need L"):
        llt_error(law, [0], n_grid=(2, 4), L=10)
