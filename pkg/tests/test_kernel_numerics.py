import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from rcmlab import ConductanceLaw, LatticeSpec, generator, heat_kernel, heat_kernel_eig, sample_environment
from rcmlab.kernel_numerics import (bounds_check, dirichlet_heat_kernel, dynkin_hunt_residual,
                                    heat_kernel_times, hoelder_diagnostic, phi, regime)

from conftest import LAWS, small_env


def test_time_zero_is_delta():
    env = small_env().with_mu(np.linspace(0.5, 2.0, 17))
    f = heat_kernel(generator(env), 0.0, 5)
    expect = np.zeros(env.n)
    expect[5] = 1 / env.mu[5]
    assert np.array_equal(f.values, expect)


def test_tolerance_range_enforced():
    gen = generator(small_env())
    with pytest.raises(ValueError):
        heat_kernel(gen, 1.0, 0, tol=1e-5)
    with pytest.raises(ValueError):
        heat_kernel(gen, -1.0, 0)


@pytest.mark.parametrize("name", list(LAWS))
def test_conservation(name):
    tol = 1e-10
    f = heat_kernel(generator(small_env(name, d2=2, L=4)), 1.0, 0, tol)
    assert abs(f.mass - 1) <= tol
    assert f.trunc_error <= tol
    assert f.values.min() >= 0


@pytest.mark.parametrize("seed", range(3))
def test_eigensolve_oracle_100_sites(seed):
    env = small_env(["polynomial", "dyadic", "custom"][seed], d2=1, L=49, seed=seed)  # 99 sites
    env = env.with_mu(np.random.default_rng(seed).uniform(0.5, 2.0, env.n))
    gen = generator(env)
    for t in (0.5, 3.0, 20.0):
        a = heat_kernel(gen, t, 10).values
        b = heat_kernel_eig(gen, t, 10).values
        assert np.max(np.abs(a - b)) <= 1e-8


@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
@settings(max_examples=15, deadline=None)
def test_mu_symmetry(seed, t):
    env = small_env("polynomial", d1=1, d2=1, L=3, seed=seed)
    env = env.with_mu(np.random.default_rng(seed).uniform(0.3, 3.0, env.n))
    gen = generator(env)
    tol = 1e-10
    x, y = 2, env.n - 3
    pxy = heat_kernel(gen, t, x, tol).values[y]
    pyx = heat_kernel(gen, t, y, tol).values[x]
    # the density w.r.t. mu is symmetric; transition masses are mu-reversible
    assert abs(pxy - pyx) <= 10 * tol
    Pxy, Pyx = pxy * env.mu[y], pyx * env.mu[x]
    assert abs(env.mu[x] * Pxy - env.mu[y] * Pyx) <= 10 * tol * env.mu.max() ** 2


def test_semigroup():
    env = small_env("custom", d2=2, L=4, seed=9)
    gen = generator(env)
    s, t, x = 0.7, 1.3, 4
    ps = heat_kernel(gen, s, x).values
    rows = np.array([heat_kernel(gen, t, z).values for z in range(env.n)])
    lhs = heat_kernel(gen, s + t, x).values
    assert np.max(np.abs(lhs - (ps * env.mu) @ rows)) <= 1e-9


def test_domination_chain():
    env = small_env("polynomial", d2=2, L=6, seed=1)
    o = env.sites.origin
    small, big = env.sites.ball(o, 2), env.sites.ball(o, 4)
    t = 2.0
    p = heat_kernel(generator(env), t, o).values
    pb = dirichlet_heat_kernel(generator(env, kill_outside=big), t, o).on_box(env.n)
    ps = dirichlet_heat_kernel(generator(env, kill_outside=small), t, o).on_box(env.n)
    tol = 2e-10
    assert np.all(ps <= pb + tol) and np.all(pb <= p + tol)


def test_dirichlet_on_whole_box_equals_full():
    env = small_env("dyadic", d2=2, L=3)
    a = heat_kernel(generator(env), 1.5, 7)
    b = dirichlet_heat_kernel(generator(env, kill_outside=np.arange(env.n)), 1.5, 7)
    assert np.array_equal(a.values, b.values)


def test_dirichlet_x0_outside_rejected():
    env = small_env()
    gen = generator(env, kill_outside=[0, 1, 2])
    with pytest.raises(ValueError):
        dirichlet_heat_kernel(gen, 1.0, 8)


@pytest.mark.parametrize("name", ["constant", "bernoulli", "polynomial"])
def test_dirichlet_mass_nonincreasing(name):
    env = small_env(name, d2=2, L=6)
    B = env.sites.ball(env.sites.origin, 3)
    fields = heat_kernel_times(generator(env, kill_outside=B), np.linspace(0, 6, 13), env.sites.origin)
    m = np.array([f.mass for f in fields])
    assert np.all(np.diff(m) <= 1e-10)


def test_dirichlet_on_diagonal_constant():
    env = small_env("constant", d2=2, L=32)
    B = env.sites.ball(env.sites.origin, 24)
    gen = generator(env, kill_outside=B)
    lam, V = linalg.eigh(gen.symmetric)  # mu = 1
    scaled = {t: float((V ** 2 * np.exp(t * lam)).sum(1).max() * t ** 2) for t in (4, 8, 16)}
    C = scaled[4]
    assert all(v <= 1.05 * C for v in scaled.values())


# -- bounds -----------------------------------------------------------------------

def test_crossover_tag():
    assert regime(8.0, 8.0, 1.0) == "crossover"
    assert phi(8.0, 8.0, 1, 1.0) == pytest.approx(8.0 ** -1)
    assert phi(8.0, 8.0, 1, 1.0) == pytest.approx(8.0 / 8.0 ** 2)
    assert regime(8.0, 2.0, 1.0) == "on" and regime(8.0, 20.0, 1.0) == "off"


def test_bounds_smallest_passing_t_on_degenerate_bernoulli():
    spec = LatticeSpec(0, 1, 128, boundary="torus")
    t_grid = np.geomspace(0.5, 32, 13)
    ref = sample_environment(ConductanceLaw.constant(1.0), spec)
    x0 = ref.sites.origin
    y = np.flatnonzero(ref.sites.distance(x0) <= 32)
    base = bounds_check(ref, x0, t_grid, y)
    lo, hi = base.C1_low / 2, 2 * base.C2_up
    env = sample_environment(ConductanceLaw.bernoulli_degenerate(0.05), spec, seed=3)
    rep = bounds_check(env, x0, t_grid, y, lower=lo, upper=hi)
    assert np.isfinite(rep.smallest_passing_t)
    late = rep.points["t"] >= rep.smallest_passing_t
    r = rep.points["ratio"][late & rep.points["used"]]
    assert np.all((r >= lo) & (r <= hi))
    # the uniformly elliptic reference passes from the first time on
    assert bounds_check(ref, x0, t_grid, y, lower=lo, upper=hi).smallest_passing_t == t_grid[0]


def test_bounds_ratio_finite_small_torus():
    env = small_env("constant", L=128, boundary="torus")
    rep = bounds_check(env, env.sites.origin, np.geomspace(4, 16, 4), np.arange(env.n))
    assert 0 < rep.C1_low <= rep.C2_up < np.inf


# -- Hoelder -------------------------------------------------------------------------

@pytest.mark.parametrize("d2,L,radius,grid,fine", [
    (1, 64, 32, [2, 4, 8, 16], [2, 2.83, 4, 5.66, 8, 11.3, 16]),
    (2, 32, 24, [2, 4, 8], [2, 2.83, 4, 5.66, 8]),
])
def test_hoelder_positive_and_stable(d2, L, radius, grid, fine):
    env = small_env("constant", d2=d2, L=L)
    B = env.sites.ball(env.sites.origin, radius)
    a = hoelder_diagnostic(env, B, grid, env.sites.origin)
    b = hoelder_diagnostic(env, B, fine, env.sites.origin)
    assert a["beta"] > 0 and a["r2"] >= 0.8
    assert abs(a["beta"] - b["beta"]) <= 0.15


def test_hoelder_needs_points():
    env = small_env("constant", L=8)
    with pytest.raises(ValueError):
        hoelder_diagnostic(env, env.sites.ball(env.sites.origin, 2), [0.1], env.sites.origin)


# -- Dynkin-Hunt -----------------------------------------------------------------------

def test_dynkin_hunt_whole_box():
    env = small_env("constant", L=16)
    r = dynkin_hunt_residual(env, np.arange(env.n), 4.0, env.sites.origin, 3, nsamples=1000)
    assert r["exit_term"] == 0.0
    assert abs(r["residual"]) <= 2 * r["tol"]


def test_dynkin_hunt_identity_1d():
    env = small_env("constant", L=64)
    o = env.sites.origin
    B = env.sites.ball(o, 32)
    r = dynkin_hunt_residual(env, B, 8.0, o, o + 5, nsamples=10_000, seed=1)
    assert r["exit_fraction"] > 0.05
    assert abs(r["residual"]) <= 3 * r["stderr"]


def test_dynkin_hunt_target_outside_before_exit():
    env = small_env("constant", L=64)
    o = env.sites.origin
    B = env.sites.ball(o, 32)
    y = env.sites.index([50])
    t = 1e-8  # P(tau < t) is about t times the exit rate, far below 1e-6
    r = dynkin_hunt_residual(env, B, t, o, y, nsamples=10_000, seed=2)
    assert r["p_dirichlet"] == 0.0
    assert abs(r["p_full"] - r["exit_term"]) <= 3 * r["stderr"] + 1e-6


def test_dynkin_hunt_refuses_small_samples():
    env = small_env("constant", L=8)
    with pytest.raises(ValueError):
        dynkin_hunt_residual(env, np.arange(5), 1.0, 2, 3, nsamples=10)
