"""Exact continuous-time simulation of the jump process.

A path at x waits an exponential time of rate sum_y J(x, y)/mu(x) and then
jumps to y with probability proportional to J(x, y).  Targets come from
per-site alias tables, built on first use and kept in an LRU cache.

Randomness is counter based: sample i of a run with seed s reads stream i of
seed s, three uniforms per jump (holding time, alias column, alias coin).
Batch runs and single recorded paths give bitwise identical trajectories.
The two compute backends visit the same sites in the same order; holding
times can differ in the last bit because numpy's vectorised log and libm
round differently.
"""
import threading
import weakref
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels, _rng
from .markov_core import ResourceCapError, jump_kernel

DEFAULT_CACHE_BYTES = 1 << 30
DEFAULT_MAX_JUMPS = 10_000_000
_caches = weakref.WeakKeyDictionary()
_caches_lock = threading.Lock()


class AliasCache:
    """LRU cache of per-site alias tables over the whole box."""

    def __init__(self, env, max_bytes=DEFAULT_CACHE_BYTES):
        self.env = env
        self.kernel = jump_kernel(env)
        self.max_bytes = max_bytes
        self.row_bytes = 16 * env.n
        self._rows = OrderedDict()
        self._lock = threading.Lock()
        self.builds = 0

    @property
    def capacity(self):
        return max(1, self.max_bytes // self.row_bytes)

    def _build(self, sites):
        w = self.kernel.block(sites, np.arange(self.env.n))
        prob, alias = _kernels.alias_rows(w)
        self.builds += len(sites)
        return w.sum(1), prob, alias

    def tables(self, sites):
        """(total J per row, prob, alias) stacked for ``sites``."""
        sites = np.atleast_1d(np.asarray(sites, dtype=np.int64))
        if sites.size > self.capacity:
            raise ResourceCapError(
                f"{sites.size} alias rows need {sites.size * self.row_bytes} bytes; cap {self.max_bytes}")
        with self._lock:
            missing = [int(s) for s in sites if int(s) not in self._rows]
            if missing:
                tot, prob, alias = self._build(np.array(missing))
                for k, s in enumerate(missing):
                    self._rows[s] = (tot[k], prob[k], alias[k])
            for s in sites:
                self._rows.move_to_end(int(s))
            while len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
            got = [self._rows[int(s)] for s in sites]
        tot = np.array([g[0] for g in got])
        prob = np.stack([g[1] for g in got])
        alias = np.stack([g[2] for g in got])
        return tot, prob, alias


def alias_cache(env, max_bytes=DEFAULT_CACHE_BYTES):
    """The shared cache for ``env`` (created on first use)."""
    with _caches_lock:
        c = _caches.get(env)
        if c is None:
            c = AliasCache(env, max_bytes)
            _caches[env] = c
        return c


# -- single recorded paths ---------------------------------------------------

@dataclass
class Trajectory:
    """Jump times and sites; ``times[0] = 0`` and ``sites[0] = x0``."""

    times: np.ndarray
    sites: np.ndarray
    horizon: float
    status: str  # "alive_at_T" or "absorbed"
    exit_site: int = -1
    exit_time: float = float("inf")
    frozen: bool = False

    def position(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return int(self.sites[k])

    def to_bytes(self):
        """Compact replay log: (float64 time, int64 site) records, little endian."""
        rec = np.empty(self.times.size, dtype=[("t", "<f8"), ("x", "<i8")])
        rec["t"] = self.times
        rec["x"] = self.sites
        return rec.tobytes()

    @staticmethod
    def from_bytes(buf, horizon, status="alive_at_T"):
        rec = np.frombuffer(buf, dtype=[("t", "<f8"), ("x", "<i8")])
        return Trajectory(rec["t"].copy(), rec["x"].copy(), horizon, status)


def simulate_path(env, x0, T, seed, domain=None, sample=0, max_jumps=DEFAULT_MAX_JUMPS):
    """One trajectory up to time ``T`` (or until it leaves ``domain``).

    Sample ``sample`` of seed ``seed`` is exactly the path that the batch
    runners produce for the same (seed, sample index).
    """
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if not 0 <= x0 < env.n:
        raise ValueError(f"x0={x0} is not a site of the box")
    inside = np.ones(env.n, bool)
    if domain is not None:
        inside[:] = False
        inside[np.asarray(domain)] = True
        if not inside[x0]:
            raise ValueError("x0 must lie in the domain")
    cache = alias_cache(env)
    state = _rng.stream_states(seed, [sample])[0]
    times, sites = [0.0], [int(x0)]
    t, x, k = 0.0, int(x0), 0
    while True:
        tot, prob, alias = cache.tables([x])
        rate = tot[0] / env.mu[x]
        if rate <= 0.0:
            return Trajectory(np.array(times), np.array(sites), T, "alive_at_T", frozen=True)
        hold = -np.log(_rng.uniform_at(state, 3 * k)) / rate
        if t + hold > T:
            return Trajectory(np.array(times), np.array(sites), T, "alive_at_T")
        t += hold
        m = prob.shape[1]
        col = min(int(_rng.uniform_at(state, 3 * k + 1) * m), m - 1)
        if _rng.uniform_at(state, 3 * k + 2) >= prob[0, col]:
            col = int(alias[0, col])
        x = col
        k += 1
        times.append(t)
        sites.append(x)
        if not inside[x]:
            return Trajectory(np.array(times), np.array(sites), T, "absorbed", x, t)
        if k >= max_jumps:
            raise RuntimeError(f"path exceeded {max_jumps} jumps before T")


# -- batch runs ---------------------------------------------------------------

def run_batch(env, starts, horizon, seed, domain=None, F=None, stream0=0,
              max_jumps=DEFAULT_MAX_JUMPS):
    """Run ``len(starts)`` independent paths; sample i uses stream stream0 + i.

    Returns a dict of arrays: final, exit_time, exit_site, njumps, status,
    and, when ``F`` (n x n pair function) is given, lhs/rhs of the jump sum
    and its compensator.
    """
    starts = np.asarray(starts, dtype=np.int64)
    n = env.n
    inside = np.ones(n, bool)
    if domain is not None:
        inside[:] = False
        inside[np.asarray(domain)] = True
        if not np.all(inside[starts]):
            raise ValueError("every start must lie in the domain")
    rows = np.flatnonzero(inside)
    tot, prob, alias = alias_cache(env).tables(rows)
    row_of = np.full(n, -1, dtype=np.int64)
    row_of[rows] = np.arange(rows.size)
    rates = np.zeros(n)
    rates[rows] = tot / env.mu[rows]
    if F is not None:
        F = np.asarray(F, float)
        K = jump_kernel(env).block(np.arange(n), np.arange(n))
        g = (F * K).sum(1) / env.mu
        use = True
    else:
        F, g, use = np.zeros((1, 1)), np.zeros(1), False
    states = _rng.stream_states(seed, stream0 + np.arange(starts.size))
    out = _kernels.run_paths(states, starts, float(horizon), rates, row_of, prob, alias,
                             inside, int(max_jumps), F, g, use)
    keys = ("final", "exit_time", "exit_site", "njumps", "status", "lhs", "rhs")
    res = dict(zip(keys, out))
    if not use:
        del res["lhs"], res["rhs"]
    return res


def simulate_exits(env, x0, B, horizon, nsamples, seed):
    """Exit times/sites from B for ``nsamples`` paths started at x0 (up to ``horizon``)."""
    return run_batch(env, np.full(nsamples, x0), horizon, seed, domain=B)


@dataclass
class ExitStats:
    """Empirical law of tau_{B(x0, r)}."""

    x0: int
    r: float
    nsamples: int
    mean: float
    stderr: float
    quantiles: dict
    cdf_s: np.ndarray = field(repr=False)
    cdf_p: np.ndarray = field(repr=False)
    seed: int = 0
    streams: tuple = (0, 0)
    truncated: int = 0
    samples: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"x0": self.x0, "r": self.r, "nsamples": self.nsamples, "mean": self.mean,
                "stderr": self.stderr, "quantiles": {str(k): v for k, v in self.quantiles.items()},
                "seed": self.seed, "streams": list(self.streams), "truncated": self.truncated}


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def exit_time_stats(env, x0, r_grid, nsamples, seed, max_jumps=DEFAULT_MAX_JUMPS, check_room=True):
    """Exit-time statistics of B(x0, r) for each r (r = 0 means the first jump).

    Each radius uses its own block of streams so results do not depend on
    which other radii are scanned.
    """
    if nsamples < 400:
        raise ValueError("nsamples must be >= 400 for stable quantiles")
    sites = env.sites
    out = []
    for j, r in enumerate(r_grid):
        if check_room and 2 * r > sites.box_radius_from(x0):
            raise ValueError(f"B(x0, {2 * r}) does not fit inside the box")
        B = sites.ball(x0, r)
        stream0 = int(round(r * 1000)) * (1 << 32)
        res = run_batch(env, np.full(nsamples, x0), np.inf, seed, domain=B,
                        stream0=stream0, max_jumps=max_jumps)
        tau = res["exit_time"]
        trunc = int((res["status"] == _kernels.TRUNCATED).sum())
        frozen = res["status"] == _kernels.FROZEN
        tau = np.where(frozen, np.inf, tau)
        s = np.quantile(tau[np.isfinite(tau)], np.linspace(0, 1, 41)) if np.isfinite(tau).any() else np.zeros(41)
        cdf = np.searchsorted(np.sort(tau), s, side="right") / nsamples
        fin = tau[np.isfinite(tau)]
        out.append(ExitStats(
            x0=int(x0), r=float(r), nsamples=int(nsamples),
            mean=float(fin.mean()) if fin.size == nsamples else float("inf"),
            stderr=float(fin.std(ddof=1) / np.sqrt(nsamples)) if fin.size == nsamples else float("inf"),
            quantiles={q: float(np.quantile(tau, q)) for q in QUANTILES},
            cdf_s=s, cdf_p=cdf, seed=int(seed), streams=(stream0, stream0 + nsamples),
            truncated=trunc, samples=tau))
    return out


def exit_scaling(stats_list, alpha):
    """Log-log slope of mean exit time vs r, and the largest empirical C0.

    C0 is the largest constant with #{tau <= C0 r^alpha} <= n/4 for every
    scanned r > 0.
    """
    pos = [s for s in stats_list if s.r > 0]
    r = np.array([s.r for s in pos])
    m = np.array([s.mean for s in pos])
    fit = stats.linregress(np.log(r), np.log(m))
    bounds = []
    for s in pos:
        q = np.sort(s.samples)
        k = s.nsamples // 4
        bounds.append(q[k] / s.r ** alpha)
    C0 = float(np.nextafter(min(bounds), 0.0))
    frac = [float(np.mean(s.samples <= C0 * s.r ** alpha)) for s in pos]
    return {"exponent": float(fit.slope), "intercept": float(fit.intercept),
            "exponent_stderr": float(fit.stderr), "C0": C0, "P_tau_le_C0": frac}


def mc_heat_kernel(env, t, x0, nsamples, seed):
    """Monte Carlo estimate of p(t, x0, .) with binomial standard errors.

    Returns
    -------
    density, stderr : arrays over the box
    """
    if nsamples < 1000:
        raise ValueError("nsamples must be >= 1000")
    if t == 0:
        dens = np.zeros(env.n)
        dens[x0] = 1.0 / env.mu[x0]
        return dens, np.zeros(env.n)
    res = run_batch(env, np.full(nsamples, x0), t, seed)
    mass = np.bincount(res["final"], minlength=env.n) / nsamples
    se = np.sqrt(mass * (1 - mass) / nsamples)
    return mass / env.mu, se / env.mu


def levy_system_check(env, B, f, nsamples, seed, x0=None):
    """Paired check of E[sum_{jumps <= tau} f(X-, X)] = E[int_0^tau sum_z f(X_s, z) q(X_s, z) ds].

    ``f`` is an n x n array (or callable on index arrays) vanishing on the diagonal.
    """
    n = env.n
    if callable(f):
        I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        F = np.asarray(f(I, J), float)
    else:
        F = np.asarray(f, float)
    if F.shape != (n, n):
        raise ValueError("f must be an n x n pair function")
    if np.any(np.diag(F) != 0):
        raise ValueError("f must vanish on the diagonal")
    B = np.asarray(B)
    if x0 is None:
        x0 = env.sites.origin if env.sites.origin in set(B.tolist()) else int(B[0])
    res = run_batch(env, np.full(nsamples, x0), np.inf, seed, domain=B, F=F)
    lhs, rhs = res["lhs"], res["rhs"]
    diff = lhs - rhs
    return {
        "lhs": float(lhs.mean()),
        "rhs": float(rhs.mean()),
        "residual": float(diff.mean()),
        "stderr": float(diff.std(ddof=1) / np.sqrt(nsamples)) if nsamples > 1 else float("nan"),
    }


def stationary_flux(env, x, y, T, nsamples, seed):
    """Empirical jump fluxes x->y and y->x per unit time from a mu-stationary start.

    Both fluxes come from the same paths, so their difference carries a
    paired standard error.  Under reversibility both equal J(x, y)/sum(mu).
    """
    u = _rng.uniforms(seed, _rng.STREAM_START, np.arange(nsamples))
    cdf = np.cumsum(env.mu) / env.mu.sum()
    starts = np.minimum(np.searchsorted(cdf, u, side="right"), env.n - 1)
    n = env.n
    Fxy = np.zeros((n, n))
    Fxy[x, y] = 1.0
    a = run_batch(env, starts, T, seed, F=Fxy)["lhs"] / T
    Fyx = np.zeros((n, n))
    Fyx[y, x] = 1.0
    b = run_batch(env, starts, T, seed, F=Fyx)["lhs"] / T
    d = a - b
    rt = np.sqrt(nsamples)
    return {"flux_xy": float(a.mean()), "flux_yx": float(b.mean()),
            "se_xy": float(a.std(ddof=1) / rt), "se_yx": float(b.std(ddof=1) / rt),
            "difference": float(d.mean()), "stderr": float(d.std(ddof=1) / rt)}
