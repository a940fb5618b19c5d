"""Conductance laws, sampled by inverse CDF from one uniform per pair.

Each law maps a uniform ``u`` in (0, 1) and a nearest-neighbour flag to a
conductance.  Only ``dyadic_trap`` looks at the flag.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import special

ADMISSIBLE_ZERO_MASS = 2.0 ** -4
_TABLE_CAP = 2 ** 22
VARIANTS = ("constant", "bernoulli_degenerate", "polynomial_tail", "dyadic_trap", "custom", "fixed")


@dataclass(frozen=True)
class ConductanceLaw:
    """A conductance distribution.

    Build instances with the classmethods (``constant``, ``bernoulli_degenerate``,
    ``polynomial_tail``, ``dyadic_trap``, ``custom``) rather than directly.
    """

    variant: str
    params: dict = field(default_factory=dict)

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, v=1.0):
        if not v >= 0:
            raise ValueError("constant conductance must be >= 0")
        return cls("constant", {"v": float(v)})

    @classmethod
    def bernoulli_degenerate(cls, p0, positive_law=None):
        """Zero with probability ``p0``, otherwise a draw from ``positive_law``."""
        if not 0.0 <= p0 < 1.0:
            raise ValueError(f"p0 must lie in [0, 1), got {p0}")
        inner = positive_law if positive_law is not None else cls.constant(1.0)
        if inner.variant == "bernoulli_degenerate":
            raise ValueError("positive_law cannot itself be degenerate")
        return cls("bernoulli_degenerate", {"p0": float(p0), "positive_law": inner.to_dict()})

    @classmethod
    def polynomial_tail(cls, p, eps, support="integers"):
        """P(w = k) = k^-(2p+1+eps) for integers k >= 2, remainder at k = 1."""
        if support != "integers":
            raise ValueError("polynomial_tail is supported on the positive integers only")
        if p < 1 or eps <= 0:
            raise ValueError("polynomial_tail needs p >= 1 and eps > 0")
        return cls("polynomial_tail", {"p": float(p), "eps": float(eps)})

    @classmethod
    def dyadic_trap(cls, N, eps, M=1):
        """Nearest-neighbour bonds take 2^-k (k = 1..N) with probability
        proportional to k^-(1+eps), total mass 1/4, else 1; longer bonds take 1/M."""
        if int(N) != N or N < 1 or eps <= 0 or M < 1:
            raise ValueError("dyadic_trap needs integer N >= 1, eps > 0, M >= 1")
        return cls("dyadic_trap", {"N": int(N), "eps": float(eps), "M": float(M)})

    @classmethod
    def custom(cls, table):
        """Discrete law from ``{value: probability}`` or a list of pairs."""
        items = sorted((float(v), float(q)) for v, q in dict(table).items())
        if not items:
            raise ValueError("custom table is empty")
        vals = np.array([v for v, _ in items])
        probs = np.array([q for _, q in items])
        if np.any(vals < 0) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("custom table needs values >= 0 and probabilities summing to 1")
        return cls("custom", {"table": [[v, q] for v, q in items]})

    @classmethod
    def fixed(cls, note=""):
        """Marker for hand-built environments; cannot be sampled."""
        return cls("fixed", {"note": str(note)})

    # -- (de)serialisation ------------------------------------------------
    def to_dict(self):
        return {"variant": self.variant, **self.params}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        variant = data.pop("variant")
        if variant == "constant":
            return cls.constant(**data)
        if variant == "bernoulli_degenerate":
            inner = data.get("positive_law")
            inner = cls.from_dict(inner) if inner is not None else None
            return cls.bernoulli_degenerate(data["p0"], inner)
        if variant == "polynomial_tail":
            return cls.polynomial_tail(**data)
        if variant == "dyadic_trap":
            return cls.dyadic_trap(**data)
        if variant == "custom":
            return cls.custom({v: q for v, q in data["table"]})
        if variant == "fixed":
            return cls.fixed(data.get("note", ""))
        raise ValueError(f"unknown law variant {variant!r}; expected one of {VARIANTS}")

    def __hash__(self):
        return hash(repr(self.to_dict()))

    # -- properties -------------------------------------------------------
    @property
    def admissible(self):
        """Zero mass below 2^-4 (always true for laws without an atom at 0)."""
        return self.zero_mass < ADMISSIBLE_ZERO_MASS

    @property
    def zero_mass(self):
        v = self.variant
        if v == "constant":
            return 1.0 if self.params["v"] == 0 else 0.0
        if v == "bernoulli_degenerate":
            inner = ConductanceLaw.from_dict(self.params["positive_law"])
            return self.params["p0"] + (1 - self.params["p0"]) * inner.zero_mass
        if v == "custom":
            return sum(q for val, q in self.params["table"] if val == 0)
        return 0.0

    @property
    def is_constant(self):
        return self.variant == "constant"

    def mean(self, nearest=False):
        """E w (for ``dyadic_trap`` the nearest-neighbour or long-range mean)."""
        v = self.variant
        if v == "fixed":
            raise ValueError("a fixed environment has no law mean")
        if v == "constant":
            return self.params["v"]
        if v == "bernoulli_degenerate":
            inner = ConductanceLaw.from_dict(self.params["positive_law"])
            return (1 - self.params["p0"]) * inner.mean(nearest)
        if v == "polynomial_tail":
            s = self._exponent
            # E w = P(1) + sum_{k>=2} k^(1-s)
            return 1.0 - (special.zeta(s) - 1.0) + (special.zeta(s - 1.0) - 1.0)
        if v == "dyadic_trap":
            if not nearest:
                return 1.0 / self.params["M"]
            k, q = self._dyadic_atoms()
            return float(np.sum(q * 2.0 ** -k) + (1 - q.sum()))
        return float(sum(val * q for val, q in self.params["table"]))

    @property
    def _exponent(self):
        return 2 * self.params["p"] + 1 + self.params["eps"]

    def _dyadic_atoms(self):
        k = np.arange(1, self.params["N"] + 1, dtype=float)
        q = k ** -(1 + self.params["eps"])
        return k, 0.25 * q / q.sum()

    def tail(self, k):
        """P(w >= k) for the polynomial tail law, k >= 1 integer."""
        if self.variant != "polynomial_tail":
            raise ValueError("tail() is defined for polynomial_tail only")
        k = np.asarray(k, dtype=float)
        return np.where(k <= 1, 1.0, special.zeta(self._exponent, np.maximum(k, 2.0)))

    def cdf(self, x, nearest=False):
        """P(w <= x)."""
        x = np.asarray(x, dtype=float)
        v = self.variant
        if v == "constant":
            return (x >= self.params["v"]).astype(float)
        if v == "bernoulli_degenerate":
            p0 = self.params["p0"]
            inner = ConductanceLaw.from_dict(self.params["positive_law"])
            return np.where(x >= 0, p0 + (1 - p0) * inner.cdf(x, nearest), 0.0)
        if v == "polynomial_tail":
            k = np.floor(x)
            return np.where(k < 1, 0.0, 1.0 - self.tail(k + 1))
        if v == "dyadic_trap":
            if not nearest:
                return (x >= 1.0 / self.params["M"]).astype(float)
            k, q = self._dyadic_atoms()
            vals = np.append(2.0 ** -k, 1.0)
            probs = np.append(q, 1 - q.sum())
            return (probs[None, :] * (vals[None, :] <= x.reshape(-1, 1))).sum(1).reshape(x.shape)
        vals = np.array([a for a, _ in self.params["table"]])
        probs = np.array([b for _, b in self.params["table"]])
        return (probs[None, :] * (vals[None, :] <= x.reshape(-1, 1))).sum(1).reshape(x.shape)

    # -- sampling ---------------------------------------------------------
    def sample(self, u, nearest=None):
        """Conductances for uniforms ``u``; ``nearest`` flags unit-distance pairs."""
        u = np.asarray(u, dtype=float)
        v = self.variant
        if v == "fixed":
            raise ValueError("a fixed law cannot be sampled")
        if v == "constant":
            return np.full(u.shape, self.params["v"])
        if v == "bernoulli_degenerate":
            p0 = self.params["p0"]
            inner = ConductanceLaw.from_dict(self.params["positive_law"])
            out = np.zeros(u.shape)
            pos = u >= p0
            # rescale the surviving uniforms so the inner law sees U(0, 1)
            out[pos] = inner.sample((u[pos] - p0) / (1 - p0),
                                    None if nearest is None else np.asarray(nearest)[pos])
            return out
        if v == "polynomial_tail":
            return _polynomial_inverse(self._exponent, u)
        if v == "dyadic_trap":
            k, q = self._dyadic_atoms()
            edges = np.cumsum(q)
            idx = np.searchsorted(edges, u, side="right")
            nn_val = np.where(idx < len(k), 2.0 ** -(idx + 1.0), 1.0)
            if nearest is None:
                nearest = np.ones(u.shape, dtype=bool)
            return np.where(nearest, nn_val, 1.0 / self.params["M"])
        vals = np.array([a for a, _ in self.params["table"]])
        edges = np.cumsum([b for _, b in self.params["table"]])
        idx = np.minimum(np.searchsorted(edges, u, side="right"), len(vals) - 1)
        return vals[idx]


_cdf_tables = {}


def _polynomial_table(s):
    tab = _cdf_tables.get(s)
    if tab is None:
        k = np.arange(2, _TABLE_CAP + 1, dtype=float)
        # P(w <= k) for k = 1.._TABLE_CAP, built from the exact tail at the cap
        upper = special.zeta(s, _TABLE_CAP + 1.0)
        tail = upper + np.cumsum((k ** -s)[::-1])[::-1]
        tab = np.concatenate([[1.0 - tail[0]], 1.0 - np.append(tail[1:], upper)])
        _cdf_tables[s] = tab
    return tab


def _polynomial_inverse(s, u):
    tab = _polynomial_table(s)
    idx = np.searchsorted(tab, u, side="left")
    out = (idx + 1).astype(float)
    beyond = idx >= len(tab)
    if np.any(beyond):
        # continuous approximation P(w > k) ~ (k + 1/2)^(1-s)/(s-1) past the table
        sv = (1.0 - u[beyond]) * (s - 1.0)
        out[beyond] = np.maximum(np.floor(sv ** (1.0 / (1.0 - s)) + 0.5), _TABLE_CAP + 1.0)
    return out
