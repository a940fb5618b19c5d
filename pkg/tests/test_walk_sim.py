import numpy as np
import pytest
from scipy import stats

from rcmlab import ConductanceLaw, Environment, LatticeSpec, exit_time_stats, generator, jump_kernel, run_batch, simulate_path
from rcmlab.kernel_numerics import heat_kernel, heat_kernel_times
from rcmlab.walk_sim import Trajectory, levy_system_check, mc_heat_kernel, stationary_flux

from conftest import small_env


def test_holding_times_exponential():
    env = small_env("polynomial", L=16, seed=3)
    x0 = env.sites.origin
    res = run_batch(env, np.full(10_000, x0), np.inf, seed=1, domain=[x0])
    rate = jump_kernel(env).row_sums([x0])[0] / env.mu[x0]
    assert stats.kstest(res["exit_time"], stats.expon(scale=1 / rate).cdf).pvalue > 1e-3


def test_jump_targets_follow_row():
    env = small_env("custom", L=16, seed=2)
    x0 = env.sites.origin
    res = run_batch(env, np.full(100_000, x0), np.inf, seed=4, domain=[x0])
    row = jump_kernel(env).row(x0)
    expected = 100_000 * row / row.sum()
    counts = np.bincount(res["exit_site"], minlength=env.n)
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_absorbed_near_boundary():
    env = small_env("constant", L=8)
    B = env.sites.ball(env.sites.origin, 3)
    x0 = env.sites.index([3])
    tr = simulate_path(env, x0, 1e6, seed=0, domain=B)
    assert tr.status == "absorbed"
    assert tr.exit_site not in set(B.tolist())
    assert tr.sites[-1] == tr.exit_site and tr.times[-1] == tr.exit_time


def test_frozen_site():
    spec = LatticeSpec(0, 1, 2)
    env = Environment(spec, ConductanceLaw.fixed("frozen"), np.ones(5), 1.0, 0, "counting",
                      np.zeros(10))
    tr = simulate_path(env, 2, 5.0, seed=0)
    assert tr.status == "alive_at_T" and tr.frozen and tr.position(4.0) == 2


def test_seed_determinism_and_batch_agreement():
    env = small_env("polynomial", L=16)
    x0 = env.sites.origin
    a = simulate_path(env, x0, 10.0, seed=9, sample=3)
    b = simulate_path(env, x0, 10.0, seed=9, sample=3)
    assert a.to_bytes() == b.to_bytes()
    res = run_batch(env, np.full(5, x0), 10.0, seed=9)
    assert res["final"][3] == a.sites[-1]
    assert res["njumps"][3] == a.sites.size - 1
    back = Trajectory.from_bytes(a.to_bytes(), 10.0)
    assert np.array_equal(back.times, a.times) and np.array_equal(back.sites, a.sites)


def test_exit_r0_mean_is_inverse_rate():
    env = small_env("polynomial", L=16, seed=1)
    x0 = env.sites.origin
    (s,) = exit_time_stats(env, x0, [0], 10_000, seed=3)
    rate = jump_kernel(env).row_sums([x0])[0] / env.mu[x0]
    assert abs(s.mean - 1 / rate) <= 3 * s.stderr


def test_exit_stats_invariants():
    env = small_env("constant", L=64)
    stats_list = exit_time_stats(env, env.sites.origin, [2, 4, 8], 1000, seed=0)
    for s in stats_list:
        q = [s.quantiles[k] for k in sorted(s.quantiles)]
        assert np.all(np.diff(q) >= 0)
        assert s.samples.min() <= s.mean <= s.samples.max()
    with pytest.raises(ValueError):
        exit_time_stats(env, env.sites.origin, [2], 100, seed=0)


def test_mc_matches_uniformization():
    env = small_env("polynomial", d1=1, d2=1, L=9, seed=5)  # 190 sites
    x0 = env.sites.index([2, 0])
    dens, se = mc_heat_kernel(env, 2.0, x0, 100_000, seed=1)
    exact = heat_kernel(generator(env), 2.0, x0).values
    mass = exact * env.mu
    big = mass >= 1e-3
    ok = np.abs(dens - exact)[big] <= 4 * np.maximum(se[big], 1e-12)
    assert ok.mean() >= 0.99


def test_mc_time_zero():
    env = small_env()
    dens, se = mc_heat_kernel(env, 0.0, 3, 1000, seed=0)
    assert dens[3] == 1.0 and dens.sum() == 1.0 and se.max() == 0


def test_mc_stderr_scaling():
    env = small_env("constant", L=16)
    _, a = mc_heat_kernel(env, 1.0, env.sites.origin, 20_000, seed=2)
    _, b = mc_heat_kernel(env, 1.0, env.sites.origin, 40_000, seed=3)
    assert a.max() / b.max() == pytest.approx(np.sqrt(2), rel=0.2)


# -- Levy system --------------------------------------------------------------------

def test_levy_zero_function():
    env = small_env("constant", L=8)
    B = env.sites.ball(env.sites.origin, 3)
    r = levy_system_check(env, B, np.zeros((env.n, env.n)), 200, seed=0)
    assert r["lhs"] == 0.0 and r["rhs"] == 0.0


def test_levy_landing_set_1d():
    env = small_env("constant", L=16)
    o = env.sites.origin
    B = env.sites.ball(o, 4)
    A = env.sites.ball(env.sites.index([6]), 2)
    F = np.zeros((env.n, env.n))
    F[:, A] = 1.0
    np.fill_diagonal(F, 0.0)
    r = levy_system_check(env, B, F, 10_000, seed=5)
    assert abs(r["residual"]) <= 3 * r["stderr"]


def test_levy_two_site_chain():
    spec = LatticeSpec(1, 0, 1)
    env = Environment(spec, ConductanceLaw.fixed("pair"), np.ones(2), 1.0, 0, "counting", np.array([0.8]))
    F = np.array([[0.0, 0.0], [1.0, 0.0]])  # the transition 1 -> 0
    r = levy_system_check(env, [1], F, 10_000, seed=1, x0=1)
    assert r["lhs"] == 1.0
    assert abs(r["rhs"] - 1.0) <= 3 * r["stderr"]


def test_levy_rejects_diagonal():
    env = small_env(L=4)
    with pytest.raises(ValueError):
        levy_system_check(env, [4], np.eye(env.n), 10, seed=0)


def test_stationary_flux_balance():
    env = small_env("polynomial", L=8, boundary="torus", seed=2)
    env = env.with_mu(np.random.default_rng(0).uniform(0.5, 2.0, env.n))
    r = stationary_flux(env, 3, 5, 20.0, 4000, seed=1)
    assert abs(r["difference"]) <= 4 * r["stderr"]
    J = jump_kernel(env).block([3], [5])[0, 0]
    assert abs(r["flux_xy"] - J / env.mu.sum()) <= 4 * r["se_xy"]


def test_exit_cdf_matches_dirichlet_mass():
    env = small_env("polynomial", L=32, seed=7)
    o = env.sites.origin
    B = env.sites.ball(o, 6)
    n = 10_000
    res = run_batch(env, np.full(n, o), np.inf, seed=2, domain=B)
    grid = np.array([0.5, 1, 2, 4, 8, 16])
    fields = heat_kernel_times(generator(env, kill_outside=B), grid, o)
    for t, f in zip(grid, fields):
        p = 1 - f.mass
        emp = np.mean(res["exit_time"] <= t)
        assert abs(emp - p) <= 4 * np.sqrt(max(p * (1 - p), 1 / n) / n)
