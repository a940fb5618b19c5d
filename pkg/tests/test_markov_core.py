import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from rcmlab import ConductanceLaw, Environment, LatticeSpec, dirichlet_energy, generator, jump_kernel
from rcmlab.kernel_numerics import heat_kernel
from rcmlab.markov_core import (GeneratorMatrix, csrw_measure, exterior_rates, lattice_row_sum,
                                periodic_weight)

from conftest import LAWS, small_env


def two_site_env(j):
    spec = LatticeSpec(d1=1, d2=0, L=1)  # sites {0, 1}, distance 1
    return Environment(spec, ConductanceLaw.fixed("pair"), np.ones(2), 1.0, 0, "counting", np.array([j]))


def test_kernel_value_at_distance_two():
    env = small_env("constant", d2=2, L=3)
    idx = env.sites
    J = jump_kernel(env).matrix
    y = idx.index([2, 0])
    assert J[idx.origin, y] == 0.125


@pytest.mark.parametrize("name", list(LAWS))
def test_kernel_symmetric(name):
    J = np.array(jump_kernel(small_env(name, d2=2, L=3)).matrix)
    assert np.max(np.abs(J - J.T)) == 0.0
    assert np.all(np.diag(J) == 0)


def test_row_sums_match_serialized_recomputation(tmp_path):
    env = small_env("polynomial", d2=2, L=5, seed=11)
    env.save(tmp_path / "e")
    raw = np.fromfile(tmp_path / "e.bin", dtype="<f8")[env.n:]
    # independent rebuild from the condensed array and raw coordinates
    n, c = env.n, env.sites.coords.astype(float)
    W = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    W[iu] = raw
    W += W.T
    R = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(R, 1.0)
    ref = (W / R ** 3).sum(1)
    got = jump_kernel(env).row_sums()
    assert np.max(np.abs(got / ref - 1)) <= 1e-14


@pytest.mark.parametrize("name", list(LAWS))
def test_generator_conservative_and_reversible(name):
    env = small_env(name, d2=2, L=4, seed=2)
    for e in (env, env.with_mu(np.random.default_rng(0).uniform(0.5, 2.0, env.n))):
        gen = generator(e)
        assert np.max(np.abs(gen.Q.sum(1))) <= 1e-12 * gen.Lambda
        S = gen.symmetric
        assert np.max(np.abs(S - S.T)) <= 1e-14 * np.abs(S).max()


def test_two_site_eigenvalues():
    j = 0.7
    gen = generator(two_site_env(j))
    ev = np.sort(np.linalg.eigvals(gen.Q).real)
    assert ev == pytest.approx([-2 * j, 0.0], abs=1e-15)


def test_empty_killing_set_rejected():
    with pytest.raises(ValueError):
        generator(small_env(), kill_outside=[])


def test_killed_rows_sum_to_minus_kill_rate():
    env = small_env("polynomial", L=10)
    B = env.sites.ball(env.sites.origin, 4)
    gen = generator(env, kill_outside=B)
    J = np.array(jump_kernel(env).matrix)
    outside = np.setdiff1d(np.arange(env.n), B)
    assert gen.kill_rate == pytest.approx(J[np.ix_(B, outside)].sum(1), rel=1e-12)


def test_generator_roundtrip(tmp_path):
    gen = generator(small_env(L=4))
    gen.save(tmp_path / "g")
    back = GeneratorMatrix.load(tmp_path / "g")
    assert np.array_equal(back.Q, gen.Q) and back.Lambda == gen.Lambda


# -- energy -------------------------------------------------------------------

def test_energy_of_constant_is_zero():
    assert dirichlet_energy(np.full(17, 3.0), small_env()) == 0.0


def test_energy_of_indicator_is_row_sum():
    env = small_env("polynomial", L=8)
    f = np.zeros(env.n)
    x0 = env.sites.origin
    f[x0] = 1.0
    assert dirichlet_energy(f, env) == pytest.approx(jump_kernel(env).row_sums()[x0], rel=1e-13)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=20, deadline=None)
def test_energy_identity(seed):
    rng = np.random.default_rng(seed)
    env = small_env("custom", d1=1, d2=1, L=4, seed=seed % 97)  # 45 sites
    env = env.with_mu(rng.uniform(0.2, 3.0, env.n))
    f = rng.normal(size=env.n)
    gen = generator(env)
    D = dirichlet_energy(f, env)
    assert abs(D + np.dot(f * env.mu, gen.apply(f))) <= 1e-10 * D


# -- CSRW -----------------------------------------------------------------------

def test_csrw_measure_on_short_line():
    env = small_env("constant", L=3, mu_mode="csrw")
    assert env.mu[env.sites.origin] == pytest.approx(49 / 18, rel=1e-15)


@pytest.mark.parametrize("name", ["constant", "polynomial", "dyadic", "custom"])
def test_csrw_unit_rates(name):
    gen = generator(small_env(name, d2=2, L=3, mu_mode="csrw"))
    assert np.max(np.abs(gen.total_rate - 1.0)) <= 1e-12


def test_csrw_rejects_isolated_site():
    env = two_site_env(0.0)
    with pytest.raises(ValueError, match="site 0"):
        csrw_measure(env)


def test_csrw_poisson_mixture_of_jump_chain():
    env = small_env("polynomial", d1=1, d2=0, L=29, seed=4, mu_mode="csrw")  # 30 sites
    J = np.array(jump_kernel(env).matrix)
    P = J / J.sum(1, keepdims=True)
    x0, t = 3, 2.5
    row = np.zeros(env.n)
    row[x0] = 1.0
    mix = np.zeros(env.n)
    for n in range(80):
        mix += stats.poisson.pmf(n, t) * row
        row = row @ P
    hk = heat_kernel(generator(env), t, x0, tol=1e-12)
    assert np.max(np.abs(hk.values * env.mu - mix)) <= 1e-10


# -- torus images and lattice exterior ------------------------------------------------

def test_periodic_weight_is_image_sum():
    P, s = 11, 2.0
    delta = np.arange(1, 11)
    m = np.arange(-20000, 20001)
    brute = np.array([np.sum(np.abs(dl + m * P) ** -s) for dl in delta])
    assert periodic_weight(delta, P, s) == pytest.approx(brute, rel=1e-4)


def test_images_kernel_rows_equal_infinite_line():
    spec = LatticeSpec(0, 1, 10, boundary="torus", images=True)
    env = Environment(spec, ConductanceLaw.constant(1.0), np.ones(spec.n_sites))
    row = jump_kernel(env).row_sums()
    # jumps by multiples of the period return to the start and are not moves
    P = spec.n_sites
    assert row == pytest.approx(2 * special.zeta(2.0) * (1 - P ** -2.0), rel=1e-12)


def test_lattice_row_sum_values():
    assert lattice_row_sum(1, 1.0) == pytest.approx(np.pi ** 2 / 3, rel=1e-14)
    # d=2 euclidean, s=3: brute force cube sum plus the integral tail
    M = 400
    k = np.arange(-M, M + 1, dtype=float)
    r2 = k[:, None] ** 2 + k[None, :] ** 2
    r2[M, M] = np.inf
    inside = r2 <= M * M
    brute = np.sum(r2[inside] ** -1.5) + 2 * np.pi / M
    assert lattice_row_sum(2, 1.0) == pytest.approx(brute, rel=1e-5)


def test_exterior_rates_complete_row_sums():
    env = small_env("constant", L=20)
    B = env.sites.ball(env.sites.origin, 5)
    total = jump_kernel(env).row_sums(B) + exterior_rates(env, B)
    assert total == pytest.approx(2 * special.zeta(2.0), rel=1e-12)


def test_lattice_exterior_needs_killing_set():
    with pytest.raises(ValueError):
        generator(small_env(), exterior="lattice")
