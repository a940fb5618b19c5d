"""Heat kernels by uniformization, with an eigensolve oracle and diagnostics.

Uniformization writes the semigroup as a Poisson mixture of powers of the
sub-stochastic matrix P = I + Q/Lambda:

    P_t = sum_k Poisson(Lambda t){k} P^k.

Probability masses are propagated as row vectors (m_{k+1} = m_k P) and the
density w.r.t. mu is mass/mu.  Truncating after N terms leaves at most the
Poisson tail mass, so the density error is at most tail/min(mu).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.sparse.linalg import expm_multiply

from .markov_core import generator, jump_kernel

#: term budget before switching to the matrix exponential
MAX_TERMS = 50_000


@dataclass
class HeatKernelField:
    """p(t, x0, .) (density w.r.t. mu) on the states of a generator."""

    t: float
    x0: int
    values: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    kind: str = "full"
    method: str = "uniformization"
    trunc_error: float = 0.0
    n_terms: int = 0

    @property
    def mass(self):
        return float(np.sum(self.values * self.mu))

    def at(self, site):
        pos = np.searchsorted(self.states, site)
        pos = np.minimum(pos, self.states.size - 1)
        return np.where(self.states[pos] == site, self.values[pos], 0.0)

    def on_box(self, n_sites):
        out = np.zeros(n_sites)
        out[self.states] = self.values
        return out


def _check_tol(tol):
    if not 0.0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")


def poisson_terms(rate_times, eps):
    """Number of terms so the Poisson tail beyond them is below ``eps``."""
    lam = float(np.max(rate_times)) if np.size(rate_times) else 0.0
    if lam <= 0.0:
        return 0
    return int(stats.poisson.isf(eps, lam)) + 1


def _weights(lam, K):
    k = np.arange(K + 1)
    lam = np.atleast_1d(lam)
    w = np.zeros((lam.size, K + 1))
    pos = lam > 0
    w[~pos, 0] = 1.0
    if np.any(pos):
        w[pos] = stats.poisson.pmf(k[None, :], lam[pos, None])
    return w


def uniformization_masses(gen, start_mass, times, tol, gather=None):
    """Masses start_mass P_t for each time (or their values at ``gather``).

    Parameters
    ----------
    gen : GeneratorMatrix
    start_mass : (m,) array
    times : array of float
    tol : float
        Bound on the Poisson tail mass.
    gather : (len(times),) int array, optional
        Row positions; when given, only m_t[gather[i]] at times[i] is returned.

    Returns
    -------
    out, tail, n_terms
    """
    times = np.atleast_1d(np.asarray(times, float))
    Lam = gen.Lambda
    lam = Lam * times
    K = poisson_terms(lam, tol)
    if K > MAX_TERMS:
        raise OverflowError(f"{K} uniformization terms exceed the budget {MAX_TERMS}")
    W = _weights(lam, K)
    tail = float(np.max(1.0 - W.sum(1))) if K else 0.0
    tail = max(tail, 0.0)
    P = gen.Q / Lam + np.eye(gen.size) if Lam > 0 else np.eye(gen.size)
    m = np.asarray(start_mass, float).copy()
    if gather is None:
        out = np.zeros((times.size, gen.size))
    else:
        gather = np.asarray(gather)
        out = np.zeros(times.size)
    for k in range(K + 1):
        if gather is None:
            out += W[:, k, None] * m[None, :]
        else:
            out += W[:, k] * m[gather]
        if k < K:
            m = m @ P
    # rounding grows at most linearly with the number of products
    tail += (K + 1) * np.finfo(float).eps * float(np.abs(start_mass).sum())
    return out, tail, K


def heat_kernel_times(gen, times, x0, tol=1e-10):
    """Fields p(t, x0, .) for every t in ``times`` from one Poisson series."""
    _check_tol(tol)
    times = np.atleast_1d(np.asarray(times, float))
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    pos = int(gen.position(x0))
    if pos < 0:
        raise ValueError(f"site {x0} is not a state of the generator")
    kind = "dirichlet" if gen.killed else "full"
    start = np.zeros(gen.size)
    start[pos] = 1.0
    mu_min = float(gen.mu.min())
    try:
        masses, tail, K = uniformization_masses(gen, start, times, tol * mu_min)
        method = "uniformization"
        err = tail / mu_min
    except OverflowError:
        # scaling-and-squaring fallback for very large Lambda t
        masses = np.array([expm_multiply(gen.Q.T * t, start) for t in times])
        method, K = "expm", 0
        err = 10 * np.finfo(float).eps * gen.Lambda * times.max() / mu_min
    masses = np.maximum(masses, 0.0)
    return [HeatKernelField(float(t), int(x0), masses[i] / gen.mu, gen.states, gen.mu,
                            kind, method, float(err), K)
            for i, t in enumerate(times)]


def heat_kernel(gen, t, x0, tol=1e-10):
    """p(t, x0, .) by uniformization; ``trunc_error`` bounds the max-norm error."""
    return heat_kernel_times(gen, [t], x0, tol)[0]


def dirichlet_heat_kernel(gen, t, x0, tol=1e-10):
    """p^B(t, x0, .) for a generator killed outside B (x0 must lie in B)."""
    if int(gen.position(x0)) < 0:
        raise ValueError(f"x0={x0} is not in B")
    return heat_kernel(gen, t, x0, tol)


def heat_kernel_eig(gen, t, x0):
    """Dense symmetric eigendecomposition oracle for small generators."""
    s = np.sqrt(gen.mu)
    S = gen.symmetric / (s[:, None] * s[None, :])
    lam, V = linalg.eigh(0.5 * (S + S.T))
    pos = int(gen.position(x0))
    # exp(tQ)[x0, .] = s_x0^-1 (V e^{t lam} V^T)[x0, .] s
    row = (V[pos] * np.exp(t * lam)) @ V.T
    mass = row * s / s[pos]
    kind = "dirichlet" if gen.killed else "full"
    return HeatKernelField(float(t), int(x0), mass / gen.mu, gen.states, gen.mu, kind, "eigensolve", 0.0)


def heat_kernel_pointwise(gen, source, times, targets, tol=1e-10):
    """p(times[i], source, targets[i]) for paired arrays, one shared series."""
    pos = int(gen.position(source))
    tpos = gen.position(np.asarray(targets))
    if pos < 0 or np.any(tpos < 0):
        raise ValueError("source and targets must be states of the generator")
    start = np.zeros(gen.size)
    start[pos] = 1.0
    mu_min = float(gen.mu.min())
    vals, tail, _ = uniformization_masses(gen, start, times, tol * mu_min, gather=tpos)
    return vals / gen.mu[tpos], tail / mu_min


# -- Dynkin-Hunt ------------------------------------------------------------

def dynkin_hunt_residual(env, B, t, x0, y, nsamples=10_000, seed=0, tol=1e-10):
    """r = p(t, x0, y) - p^B(t, x0, y) - E_x0[p(t - tau, X_tau, y); tau < t].

    The expectation is a Monte Carlo average over exits simulated from x0;
    the inner kernel is evaluated by uniformization started at y, using
    p(s, z, y) = p(s, y, z).

    Returns
    -------
    dict with ``residual``, ``stderr``, the three terms, and the exit fraction.
    """
    from .walk_sim import simulate_exits

    if nsamples < 1000:
        raise ValueError("nsamples must be >= 1000")
    kernel = jump_kernel(env)
    full = generator(env, kernel)
    killed = generator(env, kernel, kill_outside=B)
    p_full = float(heat_kernel(full, t, x0, tol).at(y))
    inB = int(killed.position(y)) >= 0
    p_B = float(dirichlet_heat_kernel(killed, t, x0, tol).at(y)) if inB else 0.0
    ex = simulate_exits(env, x0, B, t, nsamples, seed)
    hit = ex["exit_time"] < t
    vals = np.zeros(nsamples)
    if np.any(hit):
        inner, err = heat_kernel_pointwise(full, y, t - ex["exit_time"][hit], ex["exit_site"][hit], tol)
        vals[hit] = inner
    mc = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(nsamples))
    return {
        "residual": p_full - p_B - mc,
        "stderr": se,
        "p_full": p_full,
        "p_dirichlet": p_B,
        "exit_term": mc,
        "exit_fraction": float(hit.mean()),
        "tol": tol,
    }


# -- two-sided bound scan ----------------------------------------------------

@dataclass
class BoundsReport:
    """Extremal C1_low, C2_up over a (t, y) scan of p / phi."""

    C1_low: float
    C2_up: float
    points: dict = field(repr=False)
    excluded: int = 0
    retention: float = float("nan")
    window_ok: bool = True
    smallest_passing_t: float = float("nan")

    @property
    def ratio(self):
        return self.C2_up / self.C1_low

    def to_dict(self):
        return {
            "C1_low": self.C1_low,
            "C2_up": self.C2_up,
            "ratio": self.ratio,
            "excluded": self.excluded,
            "retention": self.retention,
            "window_ok": self.window_ok,
            "smallest_passing_t": self.smallest_passing_t,
        }


def phi(t, rho, d, alpha):
    """min(t^(-d/alpha), t/rho^(d+alpha)); rho = 0 gives the on-diagonal branch."""
    t = np.asarray(t, float)
    rho = np.asarray(rho, float)
    on = t ** (-d / alpha)
    with np.errstate(divide="ignore"):
        off = np.where(rho > 0, t / np.where(rho > 0, rho, 1.0) ** (d + alpha), np.inf)
    return np.minimum(on, off)


def regime(t, rho, alpha, rtol=1e-9):
    """'crossover' where both branches agree, else 'on' or 'off' diagonal."""
    t = np.asarray(t, float)
    rho = np.asarray(rho, float)
    scale = t ** (1.0 / alpha)
    tag = np.where(rho < scale, "on", "off").astype(object)
    tag[np.abs(rho - scale) <= rtol * scale] = "crossover"
    return tag


def bounds_check(env, x0, t_grid, y_set, tol=1e-10, lower=None, upper=None, gen=None):
    """Fit C1_low = min p/phi and C2_up = max p/phi over t_grid x y_set.

    Points with p below 10 * trunc_error are excluded.  When ``lower`` and
    ``upper`` are given, the report also records the smallest t of the grid
    from which every later point satisfies lower <= p/phi <= upper.
    """
    gen = gen or generator(env)
    t_grid = np.sort(np.asarray(t_grid, float))
    y_set = np.asarray(y_set)
    fields = heat_kernel_times(gen, t_grid, x0, tol)
    rho = env.sites.distance(x0, y_set)
    d, alpha = env.d, env.alpha
    T, Y, P, PHI, R, TAG, KEEP = [], [], [], [], [], [], []
    for f in fields:
        p = f.at(y_set)
        ph = phi(f.t, rho, d, alpha)
        T.append(np.full(y_set.size, f.t))
        Y.append(y_set)
        P.append(p)
        PHI.append(ph)
        R.append(rho)
        TAG.append(regime(f.t, rho, alpha))
        KEEP.append(p >= 10 * f.trunc_error)
    pts = {k: np.concatenate(v) for k, v in
           dict(t=T, y=Y, p=P, phi=PHI, rho=R, regime=TAG, used=KEEP).items()}
    used = pts["used"]
    ratio = np.where(used, pts["p"] / pts["phi"], np.nan)
    pts["ratio"] = ratio
    C1 = float(np.nanmin(ratio))
    C2 = float(np.nanmax(ratio))

    retention, ok = float("nan"), True
    if env.spec.boundary == "absorbing_box":
        # survival inside the largest ball around x0 that stays off the faces
        radius = 0.75 * env.sites.box_radius_from(x0)
        ball = env.sites.ball(x0, radius)
        kg = generator(env, kill_outside=ball)
        retention = dirichlet_heat_kernel(kg, t_grid[-1], x0, tol).mass
        ok = retention >= 0.99

    smallest = float("nan")
    if lower is not None and upper is not None:
        good = ~used | ((ratio >= lower) & (ratio <= upper))
        bad_t = np.unique(pts["t"][~good])
        later = t_grid[t_grid > bad_t.max()] if bad_t.size else t_grid
        smallest = float(later[0]) if later.size else float("nan")
    return BoundsReport(C1, C2, pts, int((~used).sum()), retention, bool(ok), smallest)


# -- Hoelder diagnostic ------------------------------------------------------

def hoelder_diagnostic(env, B, t_grid, x0, tol=1e-10, gen=None):
    """Regress log|p^B(t,x0,y) - p^B(t,x0,x0)| + (d/alpha) log t on log(rho/t^(1/alpha)).

    Uses near-diagonal targets rho(x0, y) <= t^(1/alpha), y != x0.

    Returns
    -------
    dict with ``beta`` (slope), ``intercept``, ``r2`` and ``npoints``.
    """
    gen = gen or generator(env, kill_outside=B)
    d, alpha = env.d, env.alpha
    xs, ys = [], []
    for f in heat_kernel_times(gen, t_grid, x0, tol):
        rho = env.sites.distance(x0, f.states)
        near = (rho > 0) & (rho <= f.t ** (1.0 / alpha))
        diff = np.abs(f.values[near] - f.at(x0))
        keep = diff > 10 * f.trunc_error
        xs.append(np.log(rho[near][keep] / f.t ** (1.0 / alpha)))
        ys.append(np.log(diff[keep]) + (d / alpha) * np.log(f.t))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if x.size < 8:
        raise ValueError(f"only {x.size} usable (t, y) points; need 8")
    fit = stats.linregress(x, y)
    return {"beta": float(fit.slope), "intercept": float(fit.intercept),
            "r2": float(fit.rvalue ** 2), "npoints": int(x.size)}
