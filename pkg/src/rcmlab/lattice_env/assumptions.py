"""Numerical scan of the volume and conductance-summability assumptions.

For each usable large scale R (those with B(0, 6R) inside the box) and each
radius r in a geometric grid over [R^theta/2, 2R], the checker evaluates

* d-Vol: mu bounded above, mu >= R^-kappa on B(0, R), and
  c_mu^-1 r^d <= mu(B(x, r)) <= c_mu r^d for x in B(0, 6R);
* HK1 (i): the truncated second-moment sum, the positive-conductance
  fraction c0 of balls, and the inverse-conductance sum on B(x, c_* r);
  HK1 (ii): the tail sum beyond r;
* HK2 / HK3: sup / inf over x, y in B(0, 6R) of sum_{z in B(y, r)} w_xz mu_z.

Every fitted constant is the extremal value over this scan.  Ball sums are
exact: they are convolutions of site fields with the ball indicator, done
by FFT on the box grid (circular along torus factors, zero-padded elsewhere).
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

DEFAULT_THRESHOLDS = {
    "c_mu": np.inf,  # d-Vol passes when c_mu_fit <= this
    "kappa": np.inf,
    "C1": np.inf,
    "c0": 0.5,
    "C2": np.inf,
    "C3": 0.0,
}
# lower-type constants must also clear these floors strictly
_FLOORS = {"c0": 0.5, "C3": 0.0}


def _lower_ok(fitted, key, th):
    return bool(fitted >= th[key] and fitted > _FLOORS[key])


@dataclass
class AssumptionReport:
    """Fitted constants and pass flags; per-(R, r) tables in ``grid``."""

    theta: float
    R_range: list
    r_range: list
    skipped_R: list
    thresholds: dict
    dvol: dict
    hk1: dict
    hk2: dict
    hk3: dict
    grid: list = field(default_factory=list)

    @property
    def passed(self):
        return {
            "dvol": all(self.dvol["pass"].values()),
            "hk1": self.hk1["pass_i"] and self.hk1["pass_ii"],
            "hk2": self.hk2["pass"],
            "hk3": self.hk3["pass"],
        }

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class BallConvolver:
    """Exact ball sums sum_{y : rho(x, y) <= r} f(y) for fields on the box grid."""

    def __init__(self, sites):
        self.sites = sites
        spec = sites.spec
        self.shape = spec.shape
        self.wrap = [k >= spec.d1 and spec.boundary == "torus" for k in range(spec.d)]
        self.pad = tuple(m if w else sfft.next_fast_len(2 * m - 1, real=True)
                         for m, w in zip(self.shape, self.wrap))
        self._kernels = {}

    def _kernel_hat(self, r):
        key = float(r)
        if key not in self._kernels:
            axes = []
            for m, w, P in zip(self.shape, self.wrap, self.pad):
                L = (m - 1) // 2 if w else m - 1
                axes.append(np.arange(-L, L + 1))
            grids = np.meshgrid(*axes, indexing="ij")
            dx = np.stack([g.ravel() for g in grids], axis=1)
            if self.sites.spec.metric == "euclidean":
                inside = (dx * dx).sum(1) <= r * r + 1e-9
            else:
                inside = self.sites._norm(dx) <= r + 1e-9
            ker = np.zeros(self.pad)
            idx = tuple((dx[inside, k] % P) for k, P in enumerate(self.pad))
            ker[idx] = 1.0
            self._kernels[key] = sfft.rfftn(ker)
        return self._kernels[key]

    def transform(self, fields):
        """Forward transform of a stack of site fields, shape (k, n)."""
        f = np.asarray(fields, float).reshape((-1,) + self.shape)
        return sfft.rfftn(f, s=self.pad, axes=tuple(range(1, f.ndim)))

    def ball_sums(self, fhat, r, at=None):
        """Ball sums of transformed fields, evaluated at site indices ``at``."""
        out = sfft.irfftn(fhat * self._kernel_hat(r), s=self.pad,
                            axes=tuple(range(1, len(self.pad) + 1)))
        out = out[(slice(None),) + tuple(slice(0, m) for m in self.shape)]
        out = out.reshape(out.shape[0], -1)
        return out if at is None else out[:, at]


def radius_grid(R, theta, points=8):
    """Geometric grid of integer radii over [R^theta/2, 2R]."""
    lo = max(1.0, R ** theta / 2)
    hi = 2.0 * R
    if hi < lo:
        return np.array([])
    g = np.unique(np.ceil(np.geomspace(lo, hi, points) - 1e-9))
    return g[(g >= lo - 1e-9) & (g <= hi + 1e-9)]


def _row_sums(env, X, radii, cstar, alpha, d, chunk=256):
    """Per-center radial sums for HK1 (i) first and third parts, and (ii)."""
    sites, mu = env.sites, env.mu
    S1 = np.zeros((len(X), len(radii)))
    S2 = np.zeros((len(X), len(radii)))
    S3 = np.zeros((len(X), len(radii)))
    for a in range(0, len(X), chunk):
        rows = X[a:a + chunk]
        W = env.w_block(rows, np.arange(env.n))
        D = sites.distance_block(rows, np.arange(env.n))
        for k in range(len(rows)):
            w, rho = W[k], D[k]
            pos = rho > 0
            order = np.argsort(rho[pos], kind="stable")
            rs = rho[pos][order]
            wm = (w * mu)[pos][order]
            c1 = np.cumsum(wm * rs ** (2.0 - d - alpha))
            c2 = np.cumsum(wm * rs ** (-d - alpha))
            inv = np.where(w[pos][order] > 0, mu[pos][order] / np.where(w[pos][order] > 0, w[pos][order], 1.0), 0.0)
            c3 = np.cumsum(inv)
            i1 = np.searchsorted(rs, radii + 1e-9, side="right")
            i3 = np.searchsorted(rs, cstar * radii + 1e-9, side="right")
            take = lambda c, i: np.where(i > 0, c[np.maximum(i - 1, 0)], 0.0)
            S1[a + k] = take(c1, i1)
            S2[a + k] = c2[-1] - take(c2, i1)
            S3[a + k] = take(c3, i3)
    return S1, S2, S3


def check_assumptions(env, theta, R_grid, thresholds=None, r_points=8, chunk=128):
    """Scan the standing assumptions on ``env`` and fit extremal constants.

    Parameters
    ----------
    env : Environment
    theta : float in (0, 1)
    R_grid : list of int
        Large scales; those with B(0, 6R) outside the box are skipped.
    thresholds : dict, optional
        Overrides for ``DEFAULT_THRESHOLDS``.  Upper-type constants pass when
        fitted <= threshold, lower-type ones (``c0``, ``C3``) when
        fitted >= threshold and, in any case, c0 > 1/2 and C3 > 0.

    Returns
    -------
    AssumptionReport
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    sites, mu, d, alpha = env.sites, env.mu, env.d, env.alpha
    origin = sites.origin
    room = sites.box_radius_from(origin)
    usable = [int(R) for R in R_grid if 6 * R <= room and len(radius_grid(R, theta, r_points))]
    skipped = [int(R) for R in R_grid if int(R) not in usable]
    if not usable:
        raise ValueError(f"no usable R in {list(R_grid)}: need B(0, 6R) inside the box (room {room})")
    conv = BallConvolver(sites)
    allsites = np.arange(env.n)
    vol_hat = conv.transform(mu[None, :])

    # one pass per R; fields are rebuilt per chunk of centers
    grid = []
    c_mu_vol = 0.0
    kappa_fit = 0.0
    for R in usable:
        X = sites.ball(origin, 6 * R)
        radii = radius_grid(R, theta, r_points)
        vols = np.array([conv.ball_sums(vol_hat, r, X)[0] for r in radii])  # (nr, |X|)
        ratio = vols / radii[:, None] ** d
        c_mu_R = max(ratio.max(), (1.0 / ratio).max())
        c_mu_vol = max(c_mu_vol, c_mu_R)
        inner = sites.ball(origin, R)
        kappa_R = max(0.0, -np.log(mu[inner].min()) / np.log(R)) if R > 1 else 0.0
        kappa_fit = max(kappa_fit, kappa_R)
        grid.append({"R": R, "r": radii, "X": X, "vols": vols,
                     "vol_lo": ratio.min(1), "vol_hi": ratio.max(1)})

    c_mu_fit = max(c_mu_vol, float(mu.max()), 1.0)
    cstar = 8.0 * c_mu_fit ** (2.0 / d)

    for g in grid:
        X, radii, vols = g["X"], g["r"], g["vols"]
        S1, S2, S3 = _row_sums(env, X, radii, cstar, alpha, d)
        g["C1_i_moment"] = (S1 / radii ** (2 - alpha)).max(0)
        g["C1_i_inverse"] = (S3 / radii ** d).max(0)
        g["C1_ii_tail"] = (S2 * radii ** alpha).max(0)
        hi = np.zeros(len(radii))
        lo = np.full(len(radii), np.inf)
        c0 = np.full(len(radii), np.inf)
        for a in range(0, len(X), chunk):
            cen = X[a:a + chunk]
            if env.w is None:
                # constant w: every ball sum is v * (volume minus the center's own mass)
                v = env.law.params["v"]
                near = sites.distance_block(cen, X)
                hole = mu[cen][:, None]
            else:
                W = env.w_block(cen, allsites)
                fhat = conv.transform(W * mu[None, :])
                ghat = conv.transform((W > 0) * mu[None, :])
            for k, r in enumerate(radii):
                if env.w is None:
                    pos = vols[k][None, :] - hole * (near <= r + 1e-9)
                    s = v * pos
                    pos = pos if v > 0 else 0.0 * pos
                else:
                    s = conv.ball_sums(fhat, r, X)  # rows: x = center, cols: y
                    pos = conv.ball_sums(ghat, r, X)  # rows: z = center, cols: x
                hi[k] = max(hi[k], s.max())
                lo[k] = min(lo[k], s.min())
                c0[k] = min(c0[k], (pos / vols[k][None, :]).min())
        # FFT round-off: clip to the exact range of the sums
        g["C2"] = hi / radii ** d
        lo = np.where(lo < 1e-9 * hi, 0.0, lo)
        g["C3"] = lo / radii ** d
        g["c0"] = np.clip(c0, 0.0, 1.0)

    def ext(key, fn):
        return float(fn([fn(g[key]) for g in grid]))

    C1_parts = {
        "moment": ext("C1_i_moment", np.max),
        "inverse": ext("C1_i_inverse", np.max),
        "tail": ext("C1_ii_tail", np.max),
    }
    C1_i = max(C1_parts["moment"], C1_parts["inverse"])
    c0_fit = ext("c0", np.min)
    C2_fit = ext("C2", np.max)
    C3_fit = ext("C3", np.min)

    dvol = {
        "c_mu_fit": c_mu_fit,
        "kappa_fit": kappa_fit,
        "kappa_scanned": env.mu_mode == "custom",
        "theta": theta,
        "R0": min(usable),
        "pass": {
            "mu_upper": bool(mu.max() <= th["c_mu"]),
            "mu_lower": bool(kappa_fit <= th["kappa"]),
            "volume": bool(c_mu_vol <= th["c_mu"]),
        },
    }
    hk1 = {
        "C1_fit": max(C1_i, C1_parts["tail"]),
        "C1_parts": C1_parts,
        "c0_fit": c0_fit,
        "c_star": cstar,
        "pass_i": bool(C1_i <= th["C1"]) and _lower_ok(c0_fit, "c0", th),
        "pass_ii": bool(C1_parts["tail"] <= th["C1"]),
    }
    hk2 = {"C2_fit": C2_fit, "pass": bool(C2_fit <= th["C2"])}
    hk3 = {"C3_fit": C3_fit, "pass": _lower_ok(C3_fit, "C3", th)}

    table = []
    for g in grid:
        for k, r in enumerate(g["r"]):
            row = {"R": g["R"], "r": float(r)}
            for key in ("vol_lo", "vol_hi", "C1_i_moment", "C1_i_inverse", "C1_ii_tail", "c0", "C2", "C3"):
                row[key] = float(g[key][k])
            row["pass_dvol"] = bool(max(row["vol_hi"], 1 / row["vol_lo"]) <= th["c_mu"])
            row["pass_hk1"] = bool(max(row["C1_i_moment"], row["C1_i_inverse"], row["C1_ii_tail"]) <= th["C1"]
                                   and _lower_ok(row["c0"], "c0", th))
            row["pass_hk2"] = bool(row["C2"] <= th["C2"])
            row["pass_hk3"] = _lower_ok(row["C3"], "C3", th)
            table.append(row)

    return AssumptionReport(
        theta=float(theta),
        R_range=usable,
        r_range=[float(min(g["r"].min() for g in grid)), float(max(g["r"].max() for g in grid))],
        skipped_R=skipped,
        thresholds={k: float(v) for k, v in th.items()},
        dvol=dvol, hk1=hk1, hk2=hk2, hk3=hk3, grid=table,
    )
