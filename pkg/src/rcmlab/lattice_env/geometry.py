"""Lattice boxes in Z_+^{d1} x Z^{d2}: site enumeration, distances and balls."""
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SITE_CAP = 16384
METRICS = ("euclidean", "graph", "linf")
BOUNDARIES = ("absorbing_box", "torus")


class SiteCapError(ValueError):
    """Raised when a box would exceed the configured site cap."""


@dataclass(frozen=True)
class LatticeSpec:
    """Box of radius ``L``: coordinates in [0, L] on half-space factors and
    [-L, L] on full factors.

    ``metric`` is one of ``euclidean`` (l2), ``graph`` (l1, the nearest
    neighbour graph distance) or ``linf``.  On a ``torus`` the full factors
    wrap with period 2L+1; half-space factors never wrap.  With ``images``
    (one-dimensional torus only) jump kernels sum over all periodic images,
    so the torus walk is the exact projection of the walk on Z.
    """

    d1: int = 0
    d2: int = 1
    L: int = 8
    metric: str = "euclidean"
    boundary: str = "absorbing_box"
    max_sites: int = DEFAULT_SITE_CAP
    images: bool = False

    def __post_init__(self):
        if self.d1 < 0 or self.d2 < 0 or self.d1 + self.d2 < 1:
            raise ValueError("need d1, d2 >= 0 and d1 + d2 >= 1")
        if self.L < 1:
            raise ValueError("box radius L must be >= 1")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.images and not (self.boundary == "torus" and self.d1 == 0 and self.d2 == 1):
            raise ValueError("periodic images are supported on the one-dimensional torus only")

    @property
    def d(self):
        return self.d1 + self.d2

    @property
    def shape(self):
        return (self.L + 1,) * self.d1 + (2 * self.L + 1,) * self.d2

    @property
    def n_sites(self):
        return (self.L + 1) ** self.d1 * (2 * self.L + 1) ** self.d2

    def to_dict(self):
        return dict(d1=self.d1, d2=self.d2, L=self.L, metric=self.metric,
                    boundary=self.boundary, max_sites=self.max_sites, images=self.images)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True, eq=False)
class SiteIndex:
    """Bijective site <-> index map with a distance oracle.

    Sites are ordered in C order over the box grid, so ``coords`` can be
    reshaped to ``spec.shape`` for grid-wise operations.
    """

    spec: LatticeSpec
    coords: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def d(self):
        return self.spec.d

    @property
    def lower(self):
        return np.array([0] * self.spec.d1 + [-self.spec.L] * self.spec.d2)

    def index(self, coord):
        """Index of a site given its coordinates (tuple or array of tuples)."""
        c = np.asarray(coord, dtype=np.int64)
        if c.ndim == 0:
            c = c.reshape(1)
        rel = c - self.lower
        shape = self.spec.shape
        if np.any(rel < 0) or np.any(rel >= np.asarray(shape)):
            raise IndexError(f"site {coord} lies outside the box")
        if rel.ndim == 1:
            return int(np.ravel_multi_index(tuple(rel), shape))
        return np.ravel_multi_index(tuple(rel.T), shape)

    @property
    def origin(self):
        return self.index(np.zeros(self.d, dtype=np.int64))

    def displacement(self, I, J):
        """Integer displacements x_J - x_I (broadcast over index arrays)."""
        dx = self.coords[np.asarray(J)] - self.coords[np.asarray(I)]
        if self.spec.boundary == "torus" and self.spec.d2:
            L = self.spec.L
            full = dx[..., self.spec.d1:]
            dx[..., self.spec.d1:] = (full + L) % (2 * L + 1) - L
        return dx

    def _norm(self, dx):
        m = self.spec.metric
        if m == "euclidean":
            return np.sqrt((dx * dx).sum(-1, dtype=np.int64).astype(float))
        if m == "graph":
            return np.abs(dx).sum(-1).astype(float)
        return np.abs(dx).max(-1).astype(float)

    def distance(self, i, J=None):
        """Distances from site ``i`` to sites ``J`` (all sites by default)."""
        J = np.arange(self.n) if J is None else np.asarray(J)
        return self._norm(self.displacement(np.full(J.shape, i), J))

    def distance_block(self, I, J):
        """Dense |I| x |J| distance matrix."""
        I = np.asarray(I)[:, None]
        J = np.asarray(J)[None, :]
        return self._norm(self.displacement(I, J))

    def ball(self, x, r, within=None):
        """Indices of {y : rho(x, y) <= r}, optionally restricted to ``within``."""
        J = np.arange(self.n) if within is None else np.asarray(within)
        dx = self.displacement(np.full(J.shape, x), J)
        if self.spec.metric == "euclidean":
            # exact integer comparison; r may be real
            inside = (dx * dx).sum(-1) <= r * r + 1e-9
        else:
            inside = self._norm(dx) <= r + 1e-9
        return J[inside]

    def box_radius_from(self, x):
        """Largest r with B(x, r) inside the box without touching its faces.

        On the torus the full factors never bound the ball, so only half-space
        faces and the wrap-around (r <= L) count.
        """
        c = self.coords[x]
        L = self.spec.L
        gaps = []
        for k in range(self.d):
            if k < self.spec.d1:
                gaps.append(L - c[k])  # the face at 0 is the half-space boundary
            elif self.spec.boundary == "torus":
                gaps.append(L)
            else:
                gaps.append(L - abs(c[k]))
        return float(min(gaps))

    def strictly_inside(self, B):
        """True when ``B`` (index array) avoids the outer faces of the box.

        Half-space coordinate 0 is part of the lattice, not a face.
        """
        if self.spec.boundary == "torus":
            return len(B) < self.n
        c = self.coords[np.asarray(B)]
        L = self.spec.L
        if self.spec.d1 and np.any(c[:, :self.spec.d1] >= L):
            return False
        if self.spec.d2 and np.any(np.abs(c[:, self.spec.d1:]) >= L):
            return False
        return True


def build_lattice(spec):
    """Enumerate the sites of ``spec``; refuses boxes above ``spec.max_sites``."""
    if spec.n_sites > spec.max_sites:
        raise SiteCapError(
            f"{spec.n_sites} sites exceeds the cap of {spec.max_sites}")
    axes = [np.arange(0, spec.L + 1)] * spec.d1 + [np.arange(-spec.L, spec.L + 1)] * spec.d2
    grid = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)
    coords.setflags(write=False)
    return SiteIndex(spec, coords)
