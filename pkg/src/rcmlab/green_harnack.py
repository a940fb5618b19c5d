"""Green functions, harmonic functions, Harnack ratios and the trap chain.

With q(x, y) = J(x, y)/mu(x), the killed generator on B is -D_mu^-1 A with

    A = diag(sum_{y in box} J(x, y)) - J_BB,

a symmetric positive definite matrix whenever every component of B can
jump out.  The Green density G^B(x, y) = int_0^inf p^B(t, x, y) dt is then
exactly A^-1, independent of mu, and harmonic functions solve
A u_B = J_{B, ext} u_ext.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import csgraph, csr_matrix

from . import _rng
from .kernel_numerics import uniformization_masses
from .lattice_env.environment import build_trap_environment, trap_sites
from .markov_core import DENSE_CAP, ResourceCapError, exterior_rates, generator, jump_kernel

#: step budget for trap matrix powers
TRAP_STEP_BUDGET = 1 << 16


class SingularDomainError(ValueError):
    """Some component of B cannot reach the exterior."""


def _as_set(B, n):
    B = np.unique(np.asarray(B, dtype=np.int64))
    if B.size == 0 or B[0] < 0 or B[-1] >= n:
        raise ValueError("B must be a non-empty subset of the box")
    return B


def killed_operator(env, B, kernel=None, exterior="box"):
    """A = diag(total J) - J_BB, plus the exterior index set.

    With ``exterior="lattice"`` the diagonal also counts jumps that would
    leave the box into Z^d (see ``markov_core.exterior_rates``), so A is the
    killed operator of the infinite lattice rather than of the box.
    """
    kernel = kernel or jump_kernel(env)
    B = _as_set(B, env.n)
    if B.size > DENSE_CAP:
        raise ResourceCapError(f"|B|={B.size} exceeds the dense cap {DENSE_CAP}")
    A = kernel.block(B, B)
    np.negative(A, out=A)
    diag = kernel.row_sums(B)
    if exterior == "lattice":
        diag = diag + exterior_rates(env, B, kernel)
    elif exterior != "box":
        raise ValueError("exterior must be 'box' or 'lattice'")
    A[np.diag_indices_from(A)] = diag
    ext = np.setdiff1d(np.arange(env.n), B)
    return A, B, ext


def _stuck_components(env, A, B):
    """Components of the positive-conductance graph on B with zero exit rate."""
    off = -A.copy()
    np.fill_diagonal(off, 0.0)
    ncomp, lab = csgraph.connected_components(csr_matrix(off > 0), directed=False)
    exit_rate = A.sum(1)
    bad = []
    for c in range(ncomp):
        members = lab == c
        if exit_rate[members].sum() <= 1e-300:
            bad.append(B[members].tolist())
    return bad


def _factor(env, A, B):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        bad = _stuck_components(env, A, B)
        raise SingularDomainError(f"components without exit: {bad[:3]}") from None


@dataclass
class GreenField:
    """G^B(x0, .) as a density w.r.t. mu on the sites of B."""

    B: np.ndarray = field(repr=False)
    x0: int
    values: np.ndarray = field(repr=False)
    method: str = "linear_solve"
    Theta: float = float("inf")

    def at(self, site):
        pos = np.searchsorted(self.B, site)
        pos = np.minimum(pos, self.B.size - 1)
        return np.where(self.B[pos] == site, self.values[pos], 0.0)


def theta_value(env, radius, center=None):
    """Theta(r) = 1 + sup of 1/w over distinct pairs in B(center, r); inf if any w = 0."""
    center = env.sites.origin if center is None else center
    ball = env.sites.ball(center, radius)
    if env.w is None:
        v = env.law.params["v"]
        return float("inf") if v == 0 else 1.0 + 1.0 / v
    wmin = np.inf
    for a in range(0, ball.size, 512):
        blk = env.w_block(ball[a:a + 512], ball)
        mask = ball[a:a + 512, None] != ball[None, :]
        wmin = min(wmin, blk[mask].min() if mask.any() else np.inf)
    return float("inf") if wmin <= 0 else 1.0 + 1.0 / wmin


def green_function(env, B, x0, method="linear_solve", theta_radius=None, tol=1e-14,
                   exterior="box"):
    """G^B(x0, .) by Cholesky solve, or by quadrature of p^B over time.

    Parameters
    ----------
    method : {"linear_solve", "time_integral"}
    theta_radius : float, optional
        Radius r for Theta(r) about the origin (default: 4 times the largest
        distance from the origin to B).
    exterior : {"box", "lattice"}
        Whether jumps leaving the box are absent or kill (see ``killed_operator``).
    """
    B = _as_set(B, env.n)
    if int(x0) not in set(B.tolist()):
        raise ValueError("x0 must lie in B")
    pos = int(np.searchsorted(B, x0))
    if theta_radius is None:
        theta_radius = 4 * env.sites.distance(env.sites.origin, B).max()
    Theta = theta_value(env, theta_radius)
    if method == "linear_solve":
        A, B, _ = killed_operator(env, B, exterior=exterior)
        fac = _factor(env, A, B)
        del A
        e = np.zeros(B.size)
        e[pos] = 1.0
        vals = linalg.cho_solve(fac, e, check_finite=False)
    elif method == "time_integral":
        vals = _green_time_integral(env, B, x0, tol, exterior)
    else:
        raise ValueError(f"unknown method {method!r}")
    return GreenField(B, int(x0), vals, method, Theta)


def _green_time_integral(env, B, x0, tol, exterior="box", nodes=20, growth=1.5, stop=1e-15):
    """int_0^inf p^B(t, x0, .) dt by Gauss-Legendre on geometric panels.

    The mass is carried panel to panel (semigroup property); past the last
    panel the remaining integral is closed with the observed exponential
    decay rate of the surviving mass.
    """
    gen = generator(env, kill_outside=B, exterior=exterior)
    start = np.zeros(gen.size)
    start[int(gen.position(x0))] = 1.0
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    total = np.zeros(gen.size)
    a, width = 0.0, 0.25 / gen.Lambda
    mass = start
    prev = None
    for _ in range(10_000):
        b = a + width
        local = 0.5 * width * (gx + 1.0)
        pts = np.append(local, width)
        out, _, _ = uniformization_masses(gen, mass, pts, tol)
        total += 0.5 * width * (gw[:, None] * out[:-1]).sum(0)
        new = np.maximum(out[-1], 0.0)
        surv, surv_prev = new.sum(), mass.sum()
        if surv < stop and prev is not None:
            rate = np.log(surv_prev / surv) / width if surv > 0 else np.inf
            if rate > 0:
                total += new / rate
            break
        prev = surv_prev
        mass = new
        a = b
        width *= growth
    return total / gen.mu


def harmonic_solve(env, B, boundary_data, kernel=None):
    """u with L u = 0 on B and u = boundary_data off B.

    ``boundary_data`` is a full box array; values on B are ignored.

    Returns
    -------
    u : array over the box
    residual : max |L u| on B
    """
    kernel = kernel or jump_kernel(env)
    A, B, ext = killed_operator(env, B, kernel)
    g = np.asarray(boundary_data, float)
    rhs = kernel.block(B, ext) @ g[ext]
    fac = _factor(env, A, B)
    uB = linalg.cho_solve(fac, rhs, check_finite=False)
    u = g.copy()
    u[B] = uB
    # residual in generator units: (A u_B - J_ext g)/mu
    resid = np.abs((-kernel.block(B, B) @ uB + kernel.row_sums(B) * uB - rhs) / env.mu[B]).max()
    return u, float(resid)


def hitting_profile(env, B, z):
    """f_z(x) = P_x(X_{tau_B} = z) two ways, with their max discrepancy.

    (a) LU solve of the generator equations with boundary value 1{z};
    (b) sum_v G^B(x, v) J(v, z) with the Green matrix from a Cholesky inverse.
    """
    B = _as_set(B, env.n)
    if int(z) in set(B.tolist()):
        raise ValueError("z must lie outside B")
    kernel = jump_kernel(env)
    gen = generator(env, kernel, kill_outside=B)
    Jz = kernel.block(B, [z])[:, 0]
    # (a) -Q_BB f = q(., z)
    fa = linalg.solve(-gen.Q, Jz / env.mu[B], check_finite=False)
    # (b) Ikeda-Watanabe with the explicit Green matrix
    A, _, _ = killed_operator(env, B, kernel)
    fac = _factor(env, A, B)
    G = linalg.cho_solve(fac, np.eye(B.size), check_finite=False)
    fb = G @ Jz
    return {"B": B, "z": int(z), "linear": fa, "green": fb,
            "discrepancy": float(np.abs(fa - fb).max())}


# -- Harnack ratios -----------------------------------------------------------

@dataclass
class HarnackReport:
    """Per-R maxima of sup/inf and mean/inf over B(x0, R)."""

    x0: int
    family: str
    R: list
    ehi: list
    wehi: list
    zero_inf: list
    n_functions: list
    ball_size: list
    per_function: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {"x0": self.x0, "family": self.family, "R": self.R, "ehi": self.ehi,
                "wehi": self.wehi, "zero_inf": self.zero_inf, "n_functions": self.n_functions,
                "ball_size": self.ball_size}


def ratios(values):
    """(sup/inf, mean/inf) of one nonnegative function; (nan, nan) when inf = 0."""
    lo = values.min()
    if lo <= 0:
        return float("nan"), float("nan")
    return float(values.max() / lo), float(values.mean() / lo)


def exterior_sample(env, D, k, seed):
    """Seeded sample of k sites outside D (all of them if fewer)."""
    ext = np.setdiff1d(np.arange(env.n), D)
    if ext.size <= k:
        return ext
    u = _rng.uniforms(seed, _rng.STREAM_FAMILY, ext)
    return np.sort(ext[np.argsort(u, kind="stable")[:k]])


def harnack_ratios(env, x0, R_grid, family="hitting_profiles", n_exterior=200, seed=0,
                   custom=None):
    """Harnack ratios of nonnegative functions harmonic on B(x0, 2R).

    ``family="hitting_profiles"`` uses f_z for a seeded sample of exterior z;
    ``family="custom"`` takes ``custom(env, D) -> (m, |D|)`` arrays of
    functions harmonic on D = B(x0, 2R).
    """
    sites = env.sites
    kernel = jump_kernel(env)
    out = HarnackReport(int(x0), family, [], [], [], [], [], [])
    for R in R_grid:
        if 2 * R > sites.box_radius_from(x0):
            raise ValueError(f"B(x0, {2 * R}) does not fit inside the box")
        D = sites.ball(x0, 2 * R)
        inner = np.searchsorted(D, sites.ball(x0, R))
        if family == "hitting_profiles":
            Z = exterior_sample(env, D, n_exterior, seed)
            A, D, _ = killed_operator(env, D, kernel)
            fac = _factor(env, A, D)
            del A
            # only rows in B(x0, R) are needed: f_z = (A^-1)[inner, :] J[D, z]
            E = np.zeros((D.size, inner.size))
            E[inner, np.arange(inner.size)] = 1.0
            G = linalg.cho_solve(fac, E, check_finite=False)
            F = kernel.block(D, Z).T @ G
            inner = np.arange(inner.size)
        elif family == "custom":
            F = np.atleast_2d(np.asarray(custom(env, D), float))
        else:
            raise ValueError(f"unknown family {family!r}")
        if F.shape[0] == 0:
            raise ValueError("empty family")
        e, w, zero = [], [], 0
        for f in F:
            a, b = ratios(f[inner])
            if np.isnan(a):
                zero += 1
                continue
            e.append(a)
            w.append(b)
        out.R.append(int(R))
        out.ehi.append(float(max(e)) if e else float("nan"))
        out.wehi.append(float(max(w)) if w else float("nan"))
        out.zero_inf.append(zero)
        out.n_functions.append(int(F.shape[0]))
        out.ball_size.append(int(inner.size))
        out.per_function[int(R)] = (np.array(e), np.array(w))
    return out


def ehi_necessary_condition(env, x0, R, theta_prime, k_range=None):
    """Per exterior annulus 2^k < |z - x0| <= 2^(k+1), the max over z of
    w(x0, z) / (sup_{v in B(x0, 2R), v != x0} w(v, z) R^(alpha + theta'(d - alpha)))."""
    d, alpha = env.d, env.alpha
    if not d > alpha:
        raise ValueError("the condition needs d > alpha")
    sites = env.sites
    scale = R ** (alpha + theta_prime * (d - alpha))
    V = sites.ball(x0, 2 * R)
    V = V[V != x0]
    dist = sites.distance(x0)
    room = dist.max()
    if k_range is None:
        k0 = int(np.floor(np.log2(max(2 * R, 1)))) + 1
        k_range = range(k0, int(np.floor(np.log2(room))) + 1)
    rows = []
    for k in k_range:
        Z = np.flatnonzero((dist > 2 ** k) & (dist <= 2 ** (k + 1)))
        Z = np.setdiff1d(Z, V)
        if Z.size == 0:
            raise ValueError(f"annulus k={k} is empty; the box is too small")
        num = env.w_block([x0], Z)[0]
        den = env.w_block(V, Z).max(0) * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(num > 0, num / den, 0.0)
        rows.append({"k": int(k), "n_sites": int(Z.size), "max_ratio": float(np.max(r)),
                     "argmax": int(Z[np.argmax(r)])})
    return {"x0": int(x0), "R": R, "theta_prime": theta_prime, "scale": scale, "annuli": rows}


# -- trap chain ---------------------------------------------------------------

def jump_chain(env):
    """Row-stochastic jump chain P(x, y) = J(x, y)/sum_z J(x, z)."""
    J = np.array(jump_kernel(env).matrix)
    tot = J.sum(1)
    if np.any(tot <= 0):
        raise ValueError("a site without jumps has no jump chain")
    return J / tot[:, None]


def trap_return_probability(N, n_grid, spec, eps=0.5, alpha=1.0, budget=TRAP_STEP_BUDGET):
    """P(2n, 0, 0) for the jump chain of the trap environment.

    Also returns the excursion term P(0, y) [P_{yz}^(2n-2)]_{yy} P(y, 0),
    the explicit lower bound of a walk stepping onto the strong bond, waiting
    there, and stepping back, and the largest row-sum defect of the chain.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if 2 * n_grid[-1] > budget:
        raise ResourceCapError(f"2n={2 * n_grid[-1]} exceeds the step budget {budget}")
    env = build_trap_environment(N, spec, eps, alpha)
    P = jump_chain(env)
    x, y, z = trap_sites(env.sites)
    defect = float(np.abs(P.sum(1) - 1.0).max())
    S = P[np.ix_([y, z], [y, z])]  # chain restricted to the strong bond {y, z}
    v = np.zeros(env.n)
    v[x] = 1.0
    ret, exc = {}, {}
    step = 0
    for n in n_grid:
        while step < 2 * n:
            v = v @ P
            step += 1
        ret[n] = float(v[x])
        if n >= 1:
            Sk = np.linalg.matrix_power(S, 2 * n - 2)
            exc[n] = float(P[x, y] * Sk[0, 0] * P[y, x])
    return {"N": int(N), "P_return": ret, "excursion": exc,
            "row_sum_defect": defect, "n_sites": env.n}


def trap_scaling(N_grid, spec, eps=0.5, alpha=1.0):
    """P(2n, 0, 0) 2^(2N) at n = 2^(N-1) for each N, with summary ratios."""
    rows = []
    for N in N_grid:
        n = 2 ** (N - 1)
        res = trap_return_probability(N, [n], spec, eps, alpha)
        p = res["P_return"][n]
        rows.append({"N": int(N), "n": n, "P": p, "scaled": p * 4.0 ** N,
                     "excursion_scaled": res["excursion"][n] * 4.0 ** N,
                     "row_sum_defect": res["row_sum_defect"]})
    scaled = np.array([r["scaled"] for r in rows])
    return {"rows": rows, "min_scaled": float(scaled.min()), "first_scaled": float(scaled[0]),
            "max_over_min": float(scaled.max() / scaled.min())}
