"""Jump kernels, generators, Dirichlet energy and the constant-speed measure.

Convention
----------
Everything is built from the symmetric kernel J(x, y) = w(x, y)/rho(x, y)^(d+alpha)
and a site measure mu.  The generator is

    (L f)(x) = mu(x)^-1 sum_y J(x, y) (f(y) - f(x)),

so q(x, y) = J(x, y)/mu(x), mu(x) q(x, y) = J(x, y) is symmetric, and the
energy is D(f, f) = 1/2 sum_{x,y} (f(x) - f(y))^2 J(x, y) = -<f, L f>_mu.
With mu = 1 this is the variable speed walk; with mu(x) = sum_z J(x, z) every
site has unit total jump rate (constant speed walk).  A form written with
weights mu(x) mu(y) corresponds to the conductance w(x, y) mu(x) mu(y) here.

The state space is the box itself: jumps never leave it and the full
generator is conservative.  On a one-dimensional torus with ``images`` the
kernel sums w(x, y) |x - y + m P|^-(d+alpha) over all periods m.  Killed
generators restrict rows and columns to a set B but keep the full outgoing
rate on the diagonal.
"""
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
from scipy import special

#: largest number of states for which a dense rate matrix is assembled
DENSE_CAP = 8192


class ResourceCapError(RuntimeError):
    """A dense object would exceed the configured size cap."""


@dataclass(frozen=True, eq=False)
class JumpKernel:
    """Lazy view of J(x, y) = w(x, y)/rho(x, y)^(d+alpha); blocks on demand."""

    env: object
    row_chunk: int = 512

    @property
    def n(self):
        return self.env.n

    @property
    def exponent(self):
        return self.env.d + self.env.alpha

    def block(self, I, J):
        """Dense block J[I][:, J]."""
        I = np.atleast_1d(np.asarray(I))
        J = np.atleast_1d(np.asarray(J))
        out = np.empty((I.size, J.size))
        sites = self.env.sites
        for a in range(0, I.size, self.row_chunk):
            rows = I[a:a + self.row_chunk]
            w = self.env.w_block(rows, J)
            if self.env.spec.images:
                blk = w * periodic_weight(sites.displacement(rows[:, None], J[None, :])[..., 0],
                                          2 * self.env.spec.L + 1, self.exponent)
            else:
                rho = sites.distance_block(rows, J)
                same = rho == 0
                rho[same] = 1.0
                blk = w / rho ** self.exponent
                blk[same] = 0.0
            out[a:a + rows.size] = blk
        return out

    def row(self, i):
        return self.block([i], np.arange(self.n))[0]

    def row_sums(self, I=None):
        """sum_y J(x, y) over the whole box for x in ``I`` (all sites by default)."""
        I = np.arange(self.n) if I is None else np.atleast_1d(np.asarray(I))
        allsites = np.arange(self.n)
        out = np.empty(I.size)
        for a in range(0, I.size, self.row_chunk):
            out[a:a + self.row_chunk] = self.block(I[a:a + self.row_chunk], allsites).sum(1)
        return out

    @property
    def matrix(self):
        """Dense n x n kernel (cached; refused above ``DENSE_CAP`` sites)."""
        m = self.__dict__.get("_matrix")
        if m is None:
            if self.n > DENSE_CAP:
                raise ResourceCapError(f"{self.n} sites exceed the dense cap {DENSE_CAP}")
            allsites = np.arange(self.n)
            m = self.block(allsites, allsites)
            m = 0.5 * (m + m.T)  # exact already; guards against any asymmetric rounding
            m.setflags(write=False)
            object.__setattr__(self, "_matrix", m)
        return m


def periodic_weight(delta, period, s):
    """sum_m |delta + m period|^-s over all integers m (zero when delta = 0 mod period)."""
    frac = np.mod(delta, period) / period
    out = np.zeros(frac.shape)
    nz = frac > 0
    f = frac[nz]
    out[nz] = (special.zeta(s, f) + special.zeta(s, 1.0 - f)) / period ** s
    return out


@functools.lru_cache(maxsize=32)
def lattice_row_sum(d, alpha, metric="euclidean"):
    """sum over z in Z^d, z != 0, of rho(z)^-(d+alpha).

    Exact for d = 1; otherwise cube sums at radii M and 2M with the
    M^-alpha tail extrapolated away.
    """
    s = d + alpha
    if d == 1:
        return float(2 * special.zeta(s))
    if d == 2 and metric == "euclidean":
        # sum (m^2 + n^2)^-sigma = 4 zeta(sigma) beta(sigma)
        sig = s / 2
        return float(4 * mpmath.zeta(sig) * mpmath.dirichlet(sig, [0, 1, 0, -1]))
    M = {2: 1000, 3: 100}.get(d, 30)

    def cube(m):
        axis = np.arange(-m, m + 1, dtype=float)
        total = 0.0
        for first in axis:
            rest = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
            z = np.concatenate([np.full((rest.shape[0], 1), first), rest], 1)
            if metric == "euclidean":
                r = np.sqrt((z * z).sum(1))
            elif metric == "graph":
                r = np.abs(z).sum(1)
            else:
                r = np.abs(z).max(1)
            r = r[r > 0]
            total += float(np.sum(r ** -s))
        return total

    small, big = cube(M), cube(2 * M)
    return big + (big - small) / (2 ** alpha - 1)


def exterior_rates(env, I, kernel=None):
    """Mean-field rate of jumps from x in ``I`` to Z^d outside the box.

    Sites beyond the box are given conductance E w, so the value is
    E w (sum_{z in Z^d} - sum_{y in box}) rho(x, y)^-(d+alpha); exact for
    constant laws.  Only full-space boxes (d1 = 0, no torus) are supported.
    """
    spec = env.spec
    if spec.d1 != 0 or spec.boundary != "absorbing_box":
        raise ValueError("lattice exterior needs a full-space box without wrap")
    kernel = kernel or jump_kernel(env)
    I = np.atleast_1d(np.asarray(I))
    s = kernel.exponent
    inner = np.empty(I.size)
    allsites = np.arange(env.n)
    for a in range(0, I.size, kernel.row_chunk):
        rho = env.sites.distance_block(I[a:a + kernel.row_chunk], allsites)
        rho[rho == 0] = np.inf
        inner[a:a + kernel.row_chunk] = (rho ** -s).sum(1)
    mean_w = env.law.mean() if env.law.variant != "fixed" else 1.0
    full = lattice_row_sum(env.d, float(env.alpha), spec.metric)
    return mean_w * np.maximum(full - inner, 0.0)


def jump_kernel(env):
    """J(x, y) = w(x, y)/rho(x, y)^(d+alpha), zero on the diagonal."""
    return JumpKernel(env)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Rate matrix on ``states`` (all sites, or a killing set B).

    Attributes
    ----------
    Q : (m, m) array
        q(x, y) = J(x, y)/mu(x) off the diagonal; the diagonal subtracts the
        full outgoing rate, so rows of a killed generator sum to minus the
        killing rate.
    mu : (m,) array
        Site measure restricted to ``states``.
    states : (m,) int array
        Site indices of the rows.
    killed : bool
    total_rate : (m,) array
        Full outgoing rate of each state.
    """

    Q: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    killed: bool
    total_rate: np.ndarray = field(repr=False)
    n_sites: int = 0

    @property
    def size(self):
        return self.states.size

    @property
    def Lambda(self):
        """Uniformization rate max_x |q(x, x)|."""
        return float(self.total_rate.max()) if self.size else 0.0

    @property
    def kill_rate(self):
        """Rate of jumping out of ``states`` (zero for a full generator)."""
        return -self.Q.sum(1)

    @property
    def symmetric(self):
        """mu(x) Q(x, y): symmetric, negative semi-definite."""
        return self.mu[:, None] * self.Q

    def position(self, site):
        """Row index of a site, or -1 if it is not a state."""
        pos = np.searchsorted(self.states, site)
        ok = (pos < self.size) & (self.states[np.minimum(pos, self.size - 1)] == site)
        return np.where(ok, pos, -1)

    def apply(self, f):
        """(L f) on the states, f given on the states (zero outside for killed)."""
        return self.Q @ np.asarray(f, float)

    def save(self, path):
        """Dense matrix to ``<path>.npy`` plus JSON metadata."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.Q)
        meta = {
            "Lambda": self.Lambda,
            "killed": self.killed,
            "n_sites": self.n_sites,
            "states": self.states.tolist(),
            "mu": self.mu.tolist(),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        Q = np.load(path.with_suffix(".npy"))
        meta = json.loads(path.with_suffix(".json").read_text())
        mu = np.array(meta["mu"])
        return cls(Q, mu, np.array(meta["states"], dtype=np.int64), meta["killed"],
                   -np.diag(Q).copy(), meta["n_sites"])


def generator(env, kernel=None, kill_outside=None, exterior="box"):
    """Assemble the full generator, or the one killed on leaving ``kill_outside``.

    Parameters
    ----------
    env : Environment
    kernel : JumpKernel, optional
    kill_outside : array of site indices, optional
        The set B.  When omitted the generator lives on the whole box.
    exterior : {"box", "lattice"}
        ``lattice`` also kills at the rate of jumps leaving the box into Z^d.
    """
    kernel = kernel or jump_kernel(env)
    if kill_outside is None:
        states = np.arange(env.n)
        killed = False
    else:
        states = np.unique(np.asarray(kill_outside, dtype=np.int64))
        if states.size == 0:
            raise ValueError("the killing set B is empty")
        if states[0] < 0 or states[-1] >= env.n:
            raise ValueError("B must be a subset of the box")
        killed = states.size < env.n
    if states.size > DENSE_CAP:
        raise ResourceCapError(f"{states.size} states exceed the dense cap {DENSE_CAP}")
    if not killed and env.n <= DENSE_CAP:
        JB = np.array(kernel.matrix)
        total = JB.sum(1)
    else:
        JB = kernel.block(states, states)
        total = kernel.row_sums(states) if killed else JB.sum(1)
    if exterior == "lattice":
        if kill_outside is None:
            raise ValueError("a lattice exterior needs a killing set")
        total = total + exterior_rates(env, states, kernel)
        killed = True
    elif exterior != "box":
        raise ValueError("exterior must be 'box' or 'lattice'")
    mu = env.mu[states]
    Q = JB / mu[:, None]
    rate = total / mu
    Q[np.diag_indices_from(Q)] = -rate
    Q.setflags(write=False)
    return GeneratorMatrix(Q, mu.copy(), states, killed, rate, env.n)


def dirichlet_energy(f, env, kernel=None):
    """D(f, f) = 1/2 sum_{x,y} (f(x) - f(y))^2 J(x, y)."""
    kernel = kernel or jump_kernel(env)
    f = np.asarray(f, float)
    allsites = np.arange(env.n)
    total = 0.0
    for a in range(0, env.n, kernel.row_chunk):
        rows = allsites[a:a + kernel.row_chunk]
        blk = kernel.block(rows, allsites)
        diff = f[rows][:, None] - f[None, :]
        total += 0.5 * np.sum(diff * diff * blk)
    return float(total)


def csrw_measure(env, kernel=None):
    """mu(x) = sum_z J(x, z); every site then jumps at total rate 1."""
    kernel = kernel or jump_kernel(env)
    m = kernel.row_sums()
    dead = np.flatnonzero(m <= 0)
    if dead.size:
        raise ValueError(f"site {int(dead[0])} has no positive conductance; its speed is undefined")
    return m
