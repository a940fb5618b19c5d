"""Random conductance environments on a lattice box.

Conductances live on unordered pairs, stored in condensed order (pairs
(i, j) with i < j, row by row, the same layout as ``scipy.spatial.distance``).
Constant laws are kept implicit so large boxes cost no pair storage.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import _rng
from .geometry import LatticeSpec, build_lattice
from .laws import ConductanceLaw

MU_MODES = ("counting", "csrw", "custom")
MAX_TRAP_N = 500
_FORMAT = "rcmlab-env-v1"


def n_pairs(n):
    return n * (n - 1) // 2


def pair_offset(i, n):
    """Condensed index of pair (i, i+1)."""
    return i * n - i * (i + 1) // 2


def pair_index(i, j, n):
    """Condensed index of the unordered pair {i, j} (i != j)."""
    i, j = np.minimum(i, j), np.maximum(i, j)
    return pair_offset(i, n) + (j - i - 1)


@dataclass(frozen=True, eq=False)
class Environment:
    """Conductance field ``w``, site measure ``mu`` and stable index ``alpha``.

    ``w`` is the condensed pair array, or ``None`` when the law is constant.
    """

    spec: LatticeSpec
    law: ConductanceLaw
    mu: np.ndarray = field(repr=False)
    alpha: float = 1.0
    seed: int = 0
    mu_mode: str = "counting"
    w: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.mu_mode not in MU_MODES:
            raise ValueError(f"mu_mode must be one of {MU_MODES}")
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (self.spec.n_sites,) or not np.all(mu > 0):
            raise ValueError("mu must be a strictly positive per-site array")
        object.__setattr__(self, "mu", mu)
        mu.setflags(write=False)
        if self.w is None:
            if not self.law.is_constant:
                raise ValueError("a non-constant law needs an explicit pair array")
        else:
            w = np.asarray(self.w, dtype=float)
            if w.shape != (n_pairs(self.spec.n_sites),) or np.any(w < 0):
                raise ValueError("w must be a non-negative condensed pair array")
            w.setflags(write=False)
            object.__setattr__(self, "w", w)

    @property
    def sites(self):
        idx = self.__dict__.get("_sites")
        if idx is None:
            idx = build_lattice(self.spec)
            object.__setattr__(self, "_sites", idx)
        return idx

    @property
    def n(self):
        return self.spec.n_sites

    @property
    def d(self):
        return self.spec.d

    def w_block(self, I, J):
        """Dense block w[I][:, J] (zero wherever I and J share a site)."""
        I = np.atleast_1d(np.asarray(I))
        J = np.atleast_1d(np.asarray(J))
        same = I[:, None] == J[None, :]
        if self.w is None:
            out = np.full((I.size, J.size), self.law.params["v"])
        else:
            out = self.w[pair_index(I[:, None], J[None, :], self.n) * ~same]
        out[same] = 0.0
        return out

    def w_row(self, i):
        return self.w_block([i], np.arange(self.n))[0]

    def w_dense(self):
        return self.w_block(np.arange(self.n), np.arange(self.n))

    def with_mu(self, mu, mu_mode="custom"):
        return Environment(self.spec, self.law, np.asarray(mu, float), self.alpha,
                           self.seed, mu_mode, self.w)

    def with_w(self, w, law=None):
        """Copy with a replaced condensed pair array (``law`` becomes custom)."""
        law = law or ConductanceLaw.fixed("modified")
        return Environment(self.spec, law, self.mu, self.alpha, self.seed,
                           self.mu_mode, np.asarray(w, float))

    def explicit(self):
        """Copy with ``w`` materialised even for constant laws."""
        if self.w is not None:
            return self
        w = np.full(n_pairs(self.n), self.law.params["v"])
        return Environment(self.spec, self.law, self.mu, self.alpha, self.seed, self.mu_mode, w)

    # -- serialisation ----------------------------------------------------
    def header(self):
        return {
            "format": _FORMAT,
            "spec": self.spec.to_dict(),
            "law": self.law.to_dict(),
            "seed": int(self.seed),
            "alpha": float(self.alpha),
            "mu_mode": self.mu_mode,
            "implicit_w": self.w is None,
        }

    def save(self, path):
        """Write ``<path>.json`` (header) and ``<path>.bin`` (mu then w, float64 LE)."""
        path = Path(path)
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2, sort_keys=True))
        with open(path.with_suffix(".bin"), "wb") as fh:
            fh.write(self.mu.astype("<f8").tobytes())
            if self.w is not None:
                fh.write(self.w.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        path = Path(path)
        head = json.loads(path.with_suffix(".json").read_text())
        if head.get("format") != _FORMAT:
            raise ValueError(f"unrecognised environment format {head.get('format')!r}")
        spec = LatticeSpec.from_dict(head["spec"])
        raw = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        n = spec.n_sites
        mu = raw[:n].astype(float)
        w = None if head["implicit_w"] else raw[n:].astype(float)
        law = ConductanceLaw.from_dict(head["law"])
        return cls(spec, law, mu, head["alpha"], head["seed"], head["mu_mode"], w)


def _pair_rows(n, chunk_pairs=1 << 22):
    """Yield (i0, i1, start, stop) row blocks of the condensed layout."""
    i0 = 0
    while i0 < n - 1:
        i1 = i0 + 1
        while i1 < n - 1 and pair_offset(i1 + 1, n) - pair_offset(i0, n) <= chunk_pairs:
            i1 += 1
        yield i0, i1, pair_offset(i0, n), pair_offset(i1, n)
        i0 = i1


def _nearest_flags(sites, i0, i1):
    """Unit-distance flags for the condensed pairs of rows i0..i1-1."""
    flags = []
    n = sites.n
    for i in range(i0, i1):
        J = np.arange(i + 1, n)
        dx = sites.displacement(np.full(J.shape, i), J)
        flags.append(np.abs(dx).sum(-1) == 1)
    return np.concatenate(flags) if flags else np.zeros(0, bool)


def sample_environment(law, spec, mu_mode="counting", seed=0, alpha=1.0, mu=None):
    """Draw an environment: one counter-based uniform per unordered pair.

    Parameters
    ----------
    law : ConductanceLaw
    spec : LatticeSpec
    mu_mode : {"counting", "csrw", "custom"}
        ``csrw`` sets mu to the total jump-kernel mass at each site.
    seed : int
    alpha : float
        Stable index in (0, 2).
    mu : array, optional
        Site measure for ``mu_mode="custom"``.
    """
    sites = build_lattice(spec)
    n = sites.n
    if law.is_constant:
        w = None
    else:
        w = np.empty(n_pairs(n))
        need_nn = law.variant == "dyadic_trap" or (
            law.variant == "bernoulli_degenerate" and law.params["positive_law"]["variant"] == "dyadic_trap")
        for i0, i1, a, b in _pair_rows(n):
            u = _rng.uniforms(seed, _rng.STREAM_PAIRS, np.arange(a, b))
            nn = _nearest_flags(sites, i0, i1) if need_nn else None
            w[a:b] = law.sample(u, nn)
    if mu_mode == "custom":
        if mu is None:
            raise ValueError("mu_mode='custom' needs an explicit mu")
        base_mu = np.asarray(mu, float)
    else:
        base_mu = np.ones(n)
    env = Environment(spec, law, base_mu, alpha, seed, "counting" if mu_mode == "csrw" else mu_mode, w)
    object.__setattr__(env, "_sites", sites)
    if mu_mode == "csrw":
        from ..markov_core import csrw_measure

        env = env.with_mu(csrw_measure(env), "csrw")
        object.__setattr__(env, "_sites", sites)
    return env


def trap_sites(sites):
    """(x, y, z) = (origin, e1, 2 e1)."""
    d = sites.d
    e1 = np.zeros(d, dtype=np.int64)
    e1[0] = 1
    x = sites.index(np.zeros(d, dtype=np.int64))
    return x, sites.index(e1), sites.index(2 * e1)


def build_trap_environment(N, spec, eps=0.5, alpha=1.0):
    """Deterministic trap at the origin.

    Bond (y, z) has conductance 1, every other nearest-neighbour bond at y or z
    (including (x, y)) has 2^-N, and the long-range bonds at y and z share a
    total of 2^-N/(1+eps) per site.  All remaining bonds carry conductance 1,
    so straight unit paths join x to the faces of the box.
    """
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if N > MAX_TRAP_N:
        raise ValueError(f"N={N} exceeds {MAX_TRAP_N}; 2^-N would underflow")
    if spec.L < 4:
        raise ValueError("the trap needs a box radius L >= 4")
    sites = build_lattice(spec)
    n = sites.n
    x, y, z = trap_sites(sites)
    weak = 2.0 ** -N
    w = np.ones(n_pairs(n))
    for c in (y, z):
        others = np.delete(np.arange(n), c)
        dist = np.abs(sites.displacement(np.full(others.shape, c), others)).sum(-1)
        nn = others[dist == 1]
        lr = others[dist > 1]
        # long-range bonds share the budget evenly, leaving slack 1/(1+eps)
        w[pair_index(c, lr, n)] = weak / ((1 + eps) * (n - 1))
        w[pair_index(c, nn, n)] = weak
    w[pair_index(y, z, n)] = 1.0
    law = ConductanceLaw.fixed(f"trap N={N} eps={eps}")
    env = Environment(spec, law, np.ones(n), alpha, 0, "counting", w)
    object.__setattr__(env, "_sites", sites)
    return env
