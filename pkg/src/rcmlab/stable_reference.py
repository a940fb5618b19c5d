"""Isotropic alpha-stable densities and the local limit experiment.

The limit process has Levy measure a |z|^-(d+alpha) dz and symbol
psi(xi) = c(d, alpha) a |xi|^alpha.  With the radial profile
K_d(z) = Gamma(d/2) (2/z)^(d/2-1) J_(d/2-1)(z), the spherical average of
cos(e . z), both the symbol constant and the inverse Fourier transform reduce
to one-dimensional integrals:

    c(d, alpha) = |S^(d-1)| int_0^inf (1 - K_d(rho)) rho^(-1-alpha) d rho,
    k_{a,1}(r)  = (2 pi)^-d |S^(d-1)| int_0^inf K_d(r xi) xi^(d-1) e^(-psi(xi)) d xi.

K_1 = cos and K_3(z) = sin(z)/z.  The density is tabulated once at t = 1 and
general t uses the exact scaling k_{a,t}(x) = t^(-d/alpha) k_{a,1}(t^(-1/alpha) x).
"""
import functools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import interpolate, special

from .kernel_numerics import heat_kernel_times
from .lattice_env import LatticeSpec, sample_environment
from .markov_core import generator

ALPHA_MARGIN = 1e-3


def _check_alpha(alpha, d):
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    if not (ALPHA_MARGIN <= alpha <= 2 - ALPHA_MARGIN):
        raise ValueError(f"alpha={alpha} is within {ALPHA_MARGIN} of 0 or 2; quadrature is unreliable there")


def sphere_area(d):
    """|S^(d-1)|, the surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def radial_profile(z, d):
    """K_d(z) = average of cos(e . z theta) over the unit sphere (numpy)."""
    z = np.asarray(z, float)
    if d == 1:
        return np.cos(z)
    nu = d / 2 - 1
    out = np.ones_like(z)
    nz = z > 0
    zz = z[nz]
    out[nz] = special.gamma(d / 2) * (2 / zz) ** nu * special.jv(nu, zz)
    return out


def _profile_mp(z, d):
    if d == 1:
        return mpmath.cos(z)
    nu = mpmath.mpf(d) / 2 - 1
    return mpmath.gamma(mpmath.mpf(d) / 2) * (2 / z) ** nu * mpmath.besselj(nu, z)


def _symbol_integral(d, alpha, dps):
    with mpmath.workdps(dps):
        al = mpmath.mpf(alpha)
        b = mpmath.mpf(d) / 2 + 1
        # 1 - K_d(r) = r^2/(2d) 1F2(1; 2, d/2 + 1; -r^2/4), free of cancellation near 0
        # the leading r^(1-alpha)/(2d) is integrated exactly; the rest is O(r^(3-alpha))
        head = 1 / (2 * d * (2 - al)) + mpmath.quad(
            lambda r: r ** (1 - al) / (2 * d) * (mpmath.hyp1f2(1, 2, b, -r * r / 4) - 1), [0, 1])
        osc = mpmath.quadosc(lambda r: _profile_mp(r, d) * r ** (-1 - al), [1, mpmath.inf], omega=1)
        return float(sphere_area(d) * (head + 1 / al - osc))


@functools.lru_cache(maxsize=64)
def symbol_constant_quadrature(d, alpha, tol=1e-10):
    """c(d, alpha) and an error bound.

    The integral is split at rho = 1: the head by tanh-sinh quadrature, the
    oscillatory tail by summation between zeros.  Working precision follows
    ``tol``; the bound is the change under five extra digits, floored at
    ``tol`` times the value.
    """
    _check_alpha(alpha, d)
    if not 0 < tol < 1e-3:
        raise ValueError("tol must lie in (0, 1e-3)")
    dps = int(math.ceil(-math.log10(tol))) + 5
    v = _symbol_integral(d, alpha, dps)
    fine = _symbol_integral(d, alpha, dps + 5)
    err = max(abs(fine - v), tol * abs(fine))
    return fine, err


def stable_symbol_constant(d, alpha):
    """c(d, alpha) = int (1 - cos(e . z)) |z|^(-d-alpha) dz to relative error 1e-8."""
    return symbol_constant_quadrature(int(d), float(alpha), 1e-10)[0]


def symbol_constant_closed_form(d, alpha):
    """pi^(d/2) |Gamma(-alpha/2)| / (2^alpha Gamma((d+alpha)/2)), used as an oracle."""
    return (math.pi ** (d / 2) * abs(math.gamma(-alpha / 2))
            / (2 ** alpha * math.gamma((d + alpha) / 2)))


def _gl_nodes(edges, order):
    """Composite Gauss-Legendre nodes and weights on consecutive ``edges``."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    return (a + half * (x + 1)).ravel(), (half * w).ravel()


@dataclass(frozen=True, eq=False)
class StableDensityEvaluator:
    """Tabulated k_{a,1} with exact time scaling.

    Parameters
    ----------
    a : float
        Levy intensity, measure a |z|^-(d+alpha) dz.
    alpha : float
        Index in (0, 2).
    d : int
        Dimension.  d in {1, 2} are the supported cases; larger d uses the
        same Hankel reduction and is marked ``experimental``.
    r_max : float, optional
        Largest tabulated radius at t = 1.  Beyond it the tail asymptotic
        a t |x|^-(d+alpha) is returned with an error flag.
    n_nodes : int
        Table size (nodes equispaced in log(1 + r)).
    order : int
        Gauss-Legendre order per panel of the Fourier quadrature.
    """

    a: float
    alpha: float
    d: int = 1
    r_max: float = None
    n_nodes: int = 800
    order: int = 10
    c: float = field(init=False)
    experimental: bool = field(init=False)

    def __post_init__(self):
        _check_alpha(self.alpha, self.d)
        if self.a <= 0:
            raise ValueError("a must be positive")
        object.__setattr__(self, "c", stable_symbol_constant(self.d, self.alpha))
        object.__setattr__(self, "experimental", self.d > 2)
        if self.r_max is None:
            object.__setattr__(self, "r_max", 1000.0 if self.d == 1 else 200.0)
        r = np.expm1(np.linspace(0.0, math.log1p(self.r_max), self.n_nodes))
        k = self._invert(r)
        if np.any(k <= 0):
            raise RuntimeError("Fourier inversion produced a non-positive density; raise r_max resolution")
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_spline", interpolate.CubicSpline(np.log1p(r), np.log(k)))

    @property
    def scale(self):
        """s = c(d, alpha) a, so that psi(xi) = s |xi|^alpha."""
        return self.c * self.a

    def _invert(self, r, chunk=64):
        s, al, d = self.scale, self.alpha, self.d
        cutoff = (40.0 / s) ** (1 / al)  # e^-40 beyond
        # geometric panels resolve the cusp of xi^alpha at 0, uniform panels the oscillation
        width = min(math.pi / (2 * max(self.r_max, 1.0)), cutoff / 64)
        lo = min(1e-9, cutoff * 1e-9)
        first = min(1.0 / max(self.r_max, 1.0), cutoff / 2)
        geo = np.geomspace(lo, first, 40)
        uni = np.linspace(first, cutoff, int(math.ceil((cutoff - first) / width)) + 1)
        edges = np.concatenate([[0.0], geo, uni[1:]])
        xi, wq = _gl_nodes(edges, self.order)
        base = wq * xi ** (d - 1) * np.exp(-s * xi ** al)
        pref = sphere_area(d) / (2 * math.pi) ** d
        out = np.empty(r.size)
        for i in range(0, r.size, chunk):
            rr = r[i:i + chunk, None]
            out[i:i + chunk] = pref * (radial_profile(rr * xi[None, :], d) @ base)
        return out

    def tail(self, t, x):
        """Tail asymptotic a t |x|^-(d+alpha)."""
        rho = np.abs(np.asarray(x, float)) if self.d == 1 else np.linalg.norm(np.asarray(x, float), axis=-1)
        return self.a * t * rho ** (-self.d - self.alpha)

    def __call__(self, t, x):
        """k_{a,t}(x) and a flag marking points beyond the resolved range."""
        return stable_density(self, t, x)

    def at_radius(self, r):
        """k_{a,1} at radii within the table."""
        return np.exp(self._spline(np.log1p(np.asarray(r, float))))

    def total_mass(self):
        """Integral of the tabulated k_{a,1} plus the asymptotic tail beyond r_max."""
        u = np.linspace(0.0, math.log1p(self.r_max), 40 * self.n_nodes + 1)
        r = np.expm1(u)
        f = self.at_radius(r) * r ** (self.d - 1) * (r + 1)  # dr = (r + 1) du
        inner = sphere_area(self.d) * _simpson(f, u)
        return inner + sphere_area(self.d) * self.a * self.r_max ** -self.alpha / self.alpha

    def to_dict(self):
        return {"a": self.a, "alpha": self.alpha, "d": self.d, "r_max": self.r_max,
                "n_nodes": self.n_nodes, "order": self.order, "c": self.c,
                "tail_mode": "asymptotic"}


def _simpson(f, x):
    from scipy.integrate import simpson
    return float(simpson(f, x=x))


def stable_density(ev, t, x):
    """k_{a,t}(x) for the evaluator ``ev``.

    Parameters
    ----------
    ev : StableDensityEvaluator
    t : float
        Positive time.
    x : array_like
        Points; shape (...,) for d = 1 or (..., d).

    Returns
    -------
    values : ndarray
    beyond : ndarray of bool
        True where |x| t^(-1/alpha) exceeds the resolved range; those values
        are the tail asymptotic a t |x|^-(d+alpha).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, float)
    rho = np.abs(x) if ev.d == 1 else np.linalg.norm(x, axis=-1)
    scale = t ** (-1 / ev.alpha)
    r = rho * scale
    beyond = r > ev.r_max
    vals = np.empty(r.shape)
    inside = ~beyond
    vals[inside] = scale ** ev.d * ev.at_radius(r[inside])
    with np.errstate(divide="ignore"):
        vals[beyond] = ev.a * t * rho[beyond] ** (-ev.d - ev.alpha)
    return vals, beyond


@functools.lru_cache(maxsize=16)
def _evaluator(a, alpha, d):
    return StableDensityEvaluator(a, alpha, d)


# ---------------------------------------------------------------------------
# local limit experiment


def wrap_bound(ev, period_scaled, t_grid, x_grid, m_max=200):
    """max over the grid of sum_{m != 0} k_{a,t}(x + m P/n).

    On a one-dimensional torus of period P whose kernel sums all periodic
    images, the heat kernel is the periodisation of the one on Z, so this
    image sum bounds the wrap-around error of n p against k in scaled units.
    Terms beyond ``m_max`` are bounded by the tail integral.
    """
    worst = 0.0
    m = np.arange(1, m_max + 1, dtype=float)
    for t in t_grid:
        for x in x_grid:
            pts = np.concatenate([x + m * period_scaled, x - m * period_scaled])
            vals, _ = stable_density(ev, t, pts)
            edge = (m_max + 0.5) * period_scaled - abs(x)
            rest = 2 * ev.a * t * edge ** -ev.alpha / ev.alpha
            worst = max(worst, float(vals.sum()) + rest)
    return worst


def required_torus_radius(ev, n, k_radius, t_grid, x_grid, budget=1e-3):
    """Smallest L >= 8 n k_radius whose wrap bound is at most ``budget``."""
    L = int(math.ceil(8 * n * k_radius))
    while wrap_bound(ev, (2 * L + 1) / n, t_grid, x_grid) > budget:
        L = int(math.ceil(L * 1.25))
    hi = L
    lo = max(int(math.ceil(8 * n * k_radius)), int(L / 1.25))
    while lo < hi:
        mid = (lo + hi) // 2
        if wrap_bound(ev, (2 * mid + 1) / n, t_grid, x_grid) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return hi


@dataclass
class LLTReport:
    n_grid: list
    seeds: list
    errors: np.ndarray  # (len(n_grid), len(seeds))
    L: list
    wrap: list
    a: float
    alpha: float

    @property
    def median(self):
        return np.median(self.errors, axis=1)

    @property
    def decreasing(self):
        return bool(np.all(np.diff(self.median) < 0))

    def rows(self):
        return [{"n": n, "seed": s, "sup_error": float(self.errors[i, j])}
                for i, n in enumerate(self.n_grid) for j, s in enumerate(self.seeds)]

    def to_dict(self):
        return {"n_grid": list(self.n_grid), "seeds": list(self.seeds), "a": self.a,
                "alpha": self.alpha, "L": list(self.L), "wrap_bound": list(self.wrap),
                "median_error": self.median.tolist(), "errors": self.errors.tolist(),
                "strictly_decreasing": self.decreasing}


def llt_error(law, seeds, n_grid=(4, 8, 16, 32), t_window=(0.5, 2.0), k_radius=2.0,
              alpha=1.0, d=1, n_t=7, x_step=0.25, L=None, budget=1e-3, tol=1e-10):
    """Sup-error of n^d p(n^alpha t, 0, [n x]) against k_{a,t}(x).

    Parameters
    ----------
    law : ConductanceLaw
        Must have one mean a = E w for every bond and satisfy admissibility.
    seeds : sequence of int
    n_grid : sequence of int
    t_window : (T1, T2)
    k_radius : float
        Sup over |x| <= k_radius on a grid of step ``x_step``.
    L : int or sequence, optional
        Torus radius per n; by default the smallest radius passing the wrap
        check.  A radius that fails the check is refused.

    Returns
    -------
    LLTReport
    """
    if d != 1:
        raise NotImplementedError("the local limit experiment runs on the one-dimensional torus only")
    if not law.admissible:
        raise ValueError("law puts mass >= 2^-4 on zero")
    a = float(law.mean(nearest=True))
    if not math.isclose(a, law.mean(nearest=False), rel_tol=1e-12) or not math.isfinite(a):
        raise ValueError("the law must have a single finite mean E w")
    T1, T2 = t_window
    if not 0 < T1 <= T2:
        raise ValueError("t_window must satisfy 0 < T1 <= T2")
    ev = _evaluator(a, float(alpha), 1)
    t_grid = np.linspace(T1, T2, n_t)
    x_grid = np.arange(-k_radius, k_radius + 1e-12, x_step)
    Ls = list(L) if np.iterable(L) else [L] * len(n_grid)
    errors = np.empty((len(n_grid), len(seeds)))
    used, wraps = [], []
    k_ref = np.array([stable_density(ev, t, x_grid)[0] for t in t_grid])
    for i, n in enumerate(n_grid):
        need = required_torus_radius(ev, n, k_radius, t_grid, x_grid, budget)
        Ln = need if Ls[i] is None else int(Ls[i])
        if Ln < need:
            raise ValueError(f"torus radius {Ln} fails the wrap check at n={n}; need L >= {need}")
        used.append(Ln)
        wraps.append(wrap_bound(ev, (2 * Ln + 1) / n, t_grid, x_grid))
        spec = LatticeSpec(0, 1, Ln, boundary="torus", images=True)
        targets = np.floor(n * x_grid + 1e-9).astype(np.int64) + Ln  # site index of [n x]
        for j, seed in enumerate(seeds):
            env = sample_environment(law, spec, seed=int(seed), alpha=alpha)
            gen = generator(env)
            fields = heat_kernel_times(gen, n ** alpha * t_grid, env.sites.origin, tol)
            p = np.array([f.values[targets] for f in fields])
            errors[i, j] = float(np.max(np.abs(n ** d * p - k_ref)))
    return LLTReport(list(n_grid), list(seeds), errors, used, wraps, a, float(alpha))
