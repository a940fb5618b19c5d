"""Configuration-driven experiment runner and the ``rcmlab`` command.

    rcmlab <experiment> --config <file> [--set key=value]... --out <dir>
    rcmlab plot-data <dir>

A config is JSON with an ``environment`` block, an experiment-specific
``params`` block, ``seed`` and ``caps``.  ``--set`` takes dotted paths whose
values are parsed as JSON when possible (``--set params.R_grid=[4,8]``).
The manifest written to the output directory is itself a valid config.

Exit status: 0 when every hard check passes, 1 when one fails, 2 for an
invalid config, 3 when a resource cap refuses the run.
"""
import argparse
import csv
import importlib.metadata
import json
import math
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

EXPERIMENTS = ("assumptions", "heat-kernel", "bounds-check", "exit-times", "dynkin-hunt",
               "levy-system", "green", "harnack", "ehi-condition", "trap-return", "llt")
MANIFEST_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -- config schema -------------------------------------------------------------

class LatticeBlock(_Strict):
    d1: int = Field(0, ge=0)
    d2: int = Field(1, ge=0)
    L: int = Field(16, ge=1)
    metric: Literal["euclidean", "graph", "linf"] = "euclidean"
    boundary: Literal["absorbing_box", "torus"] = "absorbing_box"
    images: bool = False


class LawBlock(_Strict):
    variant: Literal["constant", "bernoulli_degenerate", "polynomial_tail", "dyadic_trap", "custom"] = "constant"
    params: dict = Field(default_factory=lambda: {"v": 1.0})


class EnvironmentBlock(_Strict):
    lattice: LatticeBlock = Field(default_factory=LatticeBlock)
    law: LawBlock = Field(default_factory=LawBlock)
    mu_mode: Literal["counting", "csrw"] = "counting"
    alpha: float = Field(1.0, gt=0, lt=2)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)


class Caps(_Strict):
    max_sites: int = Field(16384, ge=1)
    dense_states: int = Field(8192, ge=1)
    max_samples: int = Field(200_000, ge=1)
    step_budget: int = Field(1 << 16, ge=1)


class AssumptionsParams(_Strict):
    theta: float = Field(0.5, gt=0, lt=1)
    R_grid: list[float] = Field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0], min_length=1)
    r_points: int = Field(8, ge=2)
    thresholds: Optional[dict[str, float]] = None


class HeatKernelParams(_Strict):
    x0: Optional[list[int]] = None
    times: list[float] = Field(default_factory=lambda: [1.0, 4.0], min_length=1)
    method: Literal["uniformization", "eigensolve"] = "uniformization"
    kill_radius: Optional[float] = None
    tol: float = Field(1e-10, gt=0, le=1e-6)


class BoundsParams(_Strict):
    x0: Optional[list[int]] = None
    t_min: float = Field(8.0, gt=0)
    t_max: float = Field(64.0, gt=0)
    n_t: int = Field(8, ge=2)
    y_radius: float = Field(256.0, gt=0)
    y_step: int = Field(4, ge=1)
    refine: bool = True
    stability: float = Field(0.2, gt=0)
    tol: float = Field(1e-10, gt=0, le=1e-6)


class ExitParams(_Strict):
    x0: Optional[list[int]] = None
    r_grid: list[float] = Field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0], min_length=2)
    nsamples: int = Field(10_000, ge=400)
    max_jumps: int = Field(1 << 24, ge=1)
    exponent_tolerance: float = Field(0.2, gt=0)


class DynkinParams(_Strict):
    x0: Optional[list[int]] = None
    y: list[int] = Field(default_factory=lambda: [1])
    B_radius: float = Field(4.0, gt=0)
    t: float = Field(4.0, gt=0)
    nsamples: int = Field(10_000, ge=1000)
    tol: float = Field(1e-10, gt=0, le=1e-6)
    z_max: float = Field(3.0, gt=0)


class LevyParams(_Strict):
    x0: Optional[list[int]] = None
    B_radius: float = Field(4.0, gt=0)
    f: Literal["long_jumps", "jump_length", "exit_jumps"] = "long_jumps"
    threshold: float = Field(2.0, ge=0)
    nsamples: int = Field(10_000, ge=2)
    z_max: float = Field(3.0, gt=0)


class GreenParams(_Strict):
    x0: Optional[list[int]] = None
    B_radius: float = Field(48.0, gt=0)
    exterior: Literal["box", "lattice"] = "lattice"
    fit_min: float = Field(2.0, gt=0)
    fit_max: Optional[float] = None
    dual_radius: Optional[float] = None
    slope_tolerance: float = Field(0.2, gt=0)
    dual_tolerance: float = Field(1e-6, gt=0)


class HarnackParams(_Strict):
    x0: Optional[list[int]] = None
    R_grid: list[int] = Field(default_factory=lambda: [4, 8, 16], min_length=2)
    n_exterior: Optional[int] = Field(200, ge=1)
    box_factor: Optional[float] = Field(None, ge=2)
    expect: Literal["none", "ehi_failure", "ehi_holds"] = "none"
    wehi_factor: float = Field(3.0, gt=0)
    ehi_factor: float = Field(3.0, gt=0)


class EhiConditionParams(_Strict):
    x0: Optional[list[int]] = None
    R: float = Field(4.0, gt=0)
    theta_prime: float = Field(0.5, ge=0, le=1)


class TrapParams(_Strict):
    N_grid: list[int] = Field(default_factory=lambda: [3, 4, 5, 6, 7, 8], min_length=1)
    eps: float = Field(0.5, gt=0)
    band: float = Field(10.0, gt=1)


class LLTParams(_Strict):
    n_grid: list[int] = Field(default_factory=lambda: [4, 8, 16, 32], min_length=2)
    t_window: tuple[float, float] = (0.5, 2.0)
    k_radius: float = Field(2.0, gt=0)
    n_t: int = Field(7, ge=1)
    x_step: float = Field(0.25, gt=0)
    budget: float = Field(1e-3, gt=0)
    tol: float = Field(1e-10, gt=0, le=1e-6)


PARAMS = {
    "assumptions": AssumptionsParams, "heat-kernel": HeatKernelParams,
    "bounds-check": BoundsParams, "exit-times": ExitParams, "dynkin-hunt": DynkinParams,
    "levy-system": LevyParams, "green": GreenParams, "harnack": HarnackParams,
    "ehi-condition": EhiConditionParams, "trap-return": TrapParams, "llt": LLTParams,
}


class ExperimentConfig(_Strict):
    """Fully resolved experiment configuration."""

    experiment: Literal[EXPERIMENTS]
    environment: EnvironmentBlock = Field(default_factory=EnvironmentBlock)
    params: dict = Field(default_factory=dict)
    seed: int = 0
    caps: Caps = Field(default_factory=Caps)
    out: Optional[str] = None

    @model_validator(mode="after")
    def _resolve_params(self):
        model = PARAMS[self.experiment].model_validate(self.params)
        self.params = model.model_dump(mode="json")
        return self

    def resolved(self):
        """The config as written to the manifest (the output dir is not part of it)."""
        data = self.model_dump(mode="json")
        data.pop("out")
        return data


class CapError(RuntimeError):
    """A configured resource cap refuses the run."""


def _set_path(data, dotted, raw):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"--set {dotted}: {k} is not a block")
    node[keys[-1]] = value


def load_config(path=None, experiment=None, overrides=(), out=None):
    """Read a config (or a manifest), apply ``key=value`` overrides, validate."""
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
        if "manifest_version" in data:
            data = data["config"]
    if experiment is not None:
        if data.get("experiment", experiment) != experiment:
            raise ValueError(f"config is for {data['experiment']!r}, not {experiment!r}")
        data["experiment"] = experiment
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(data, k.strip(), v.strip())
    if out is not None:
        data["out"] = str(out)
    return ExperimentConfig.model_validate(data)


# -- output helpers ------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, rows, columns=None):
    """Rows of dicts to CSV with round-trip float formatting."""
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _versions():
    import numba
    import scipy

    try:
        own = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        own = "unknown"
    return {"rcmlab": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


# -- experiments ---------------------------------------------------------------

def _env(cfg, seed=None):
    from .lattice_env import ConductanceLaw, LatticeSpec, sample_environment

    e = cfg.environment
    spec = LatticeSpec(e.lattice.d1, e.lattice.d2, e.lattice.L, e.lattice.metric,
                       e.lattice.boundary, cfg.caps.max_sites, e.lattice.images)
    law = ConductanceLaw.from_dict({"variant": e.law.variant, **e.law.params})
    s = e.seeds[0] if seed is None else seed
    return sample_environment(law, spec, e.mu_mode, seed=s, alpha=e.alpha)


def _site(env, coords):
    if coords is None:
        return env.sites.origin
    if len(coords) != env.d:
        raise ValueError(f"coordinates {coords} do not have dimension {env.d}")
    return int(env.sites.index(coords))


def _dense(cfg, m):
    if m > cfg.caps.dense_states:
        raise CapError(f"{m} states exceed caps.dense_states={cfg.caps.dense_states}")


def _samples(cfg, m):
    if m > cfg.caps.max_samples:
        raise CapError(f"{m} samples exceed caps.max_samples={cfg.caps.max_samples}")


def _coords(env, idx):
    c = env.sites.coords[np.asarray(idx)]
    return {f"x{k}": c[..., k] for k in range(env.d)}


def run_assumptions(cfg, p, out):
    from .lattice_env import check_assumptions

    env = _env(cfg)
    rep = check_assumptions(env, p["theta"], p["R_grid"], p["thresholds"], p["r_points"])
    write_csv(out / "assumptions_grid.csv", rep.grid)
    d = rep.to_dict()
    write_json(out / "assumptions.json", d)
    checks = {"dvol": bool(rep.dvol["pass"]["volume"] and rep.dvol["pass"]["mu_upper"]
                           and rep.dvol["pass"]["mu_lower"]),
              "hk1": bool(rep.hk1["pass_i"] and rep.hk1["pass_ii"]),
              "hk2": bool(rep.hk2["pass"]), "hk3": bool(rep.hk3["pass"])}
    return checks, {"fitted": {"c_mu": rep.dvol["c_mu_fit"], "C1": rep.hk1["C1_fit"],
                               "c0": rep.hk1["c0_fit"], "C2": rep.hk2["C2_fit"],
                               "C3": rep.hk3["C3_fit"]}}


def run_heat_kernel(cfg, p, out):
    from .kernel_numerics import heat_kernel_eig, heat_kernel_times
    from .markov_core import generator

    env = _env(cfg)
    x0 = _site(env, p["x0"])
    B = None if p["kill_radius"] is None else env.sites.ball(x0, p["kill_radius"])
    _dense(cfg, env.n if B is None else B.size)
    gen = generator(env, kill_outside=B)
    if p["method"] == "eigensolve":
        fields = [heat_kernel_eig(gen, t, x0) for t in p["times"]]
    else:
        fields = heat_kernel_times(gen, p["times"], x0, p["tol"])
    rows = []
    masses, minval = [], 0.0
    for f in fields:
        rho = env.sites.distance(x0, f.states)
        xc = _coords(env, f.states)
        for i in range(f.states.size):
            rows.append({"t": f.t, "site": int(f.states[i]), **{k: int(v[i]) for k, v in xc.items()},
                         "rho": float(rho[i]), "p": float(f.values[i])})
        masses.append(f.mass)
        minval = min(minval, float(f.values.min()))
    cols = ["t", "site"] + [f"x{k}" for k in range(env.d)] + ["rho", "p"]
    write_csv(out / "heat_kernel.csv", rows, cols)
    tol = 1e-8
    checks = {"nonnegative": minval >= -tol,
              "mass": all(abs(m - 1) <= tol for m in masses) if not gen.killed
              else all(m <= 1 + tol for m in masses)}
    return checks, {"mass": masses, "trunc_error": [f.trunc_error for f in fields]}


def run_bounds_check(cfg, p, out):
    from .kernel_numerics import bounds_check
    from .markov_core import generator

    env = _env(cfg)
    _dense(cfg, env.n)
    x0 = _site(env, p["x0"])
    gen = generator(env)
    rho = env.sites.distance(x0)
    t_grid = np.geomspace(p["t_min"], p["t_max"], p["n_t"])
    y_all = np.flatnonzero(rho <= p["y_radius"])
    y_set = y_all[(rho[y_all] % p["y_step"]) == 0] if env.d == 1 else y_all[::p["y_step"]]
    rep = bounds_check(env, x0, t_grid, y_set, p["tol"], gen=gen)
    pts = rep.points
    rows = [{"t": pts["t"][i], "site": int(pts["y"][i]), "rho": pts["rho"][i], "p": pts["p"][i],
             "phi": pts["phi"][i], "ratio": pts["ratio"][i], "regime": pts["regime"][i],
             "used": bool(pts["used"][i])} for i in range(pts["t"].size)]
    write_csv(out / "bounds.csv", rows)
    summary = {"coarse": rep.to_dict()}
    checks = {"finite": bool(np.isfinite(rep.ratio) and rep.C1_low > 0), "window": rep.window_ok}
    if p["refine"]:
        fine = bounds_check(env, x0, np.geomspace(p["t_min"], p["t_max"], 2 * p["n_t"] - 1), y_all,
                            p["tol"], gen=gen)
        change = abs(fine.ratio / rep.ratio - 1)
        summary["refined"] = fine.to_dict()
        summary["relative_change"] = change
        checks["refinement_stable"] = bool(change <= p["stability"])
    return checks, summary


def run_exit_times(cfg, p, out):
    from .walk_sim import exit_scaling, exit_time_stats

    env = _env(cfg)
    _samples(cfg, p["nsamples"])
    x0 = _site(env, p["x0"])
    stats_list = exit_time_stats(env, x0, p["r_grid"], p["nsamples"], cfg.seed, p["max_jumps"])
    scal = exit_scaling(stats_list, env.alpha)
    rows = []
    for s, frac in zip(stats_list, scal["P_tau_le_C0"]):
        rows.append({"r": s.r, "mean": s.mean, "stderr": s.stderr, "truncated": s.truncated,
                     **{f"q{q}": s.quantiles[q] for q in sorted(s.quantiles)},
                     "P_tau_le_C0": frac})
    write_csv(out / "exit_times.csv", rows)
    checks = {"exponent": abs(scal["exponent"] - env.alpha) <= p["exponent_tolerance"],
              "C0_quartile": all(f <= 0.25 for f in scal["P_tau_le_C0"]),
              "no_truncation": all(s.truncated == 0 for s in stats_list)}
    return checks, scal


def _ball_corpus(cfg, p):
    env = _env(cfg)
    x0 = _site(env, p["x0"])
    B = env.sites.ball(x0, p["B_radius"])
    return env, x0, B


def run_dynkin_hunt(cfg, p, out):
    from .kernel_numerics import dynkin_hunt_residual

    env, x0, B = _ball_corpus(cfg, p)
    _dense(cfg, env.n)
    _samples(cfg, p["nsamples"])
    y = _site(env, p["y"])
    r = dynkin_hunt_residual(env, B, p["t"], x0, y, p["nsamples"], cfg.seed, p["tol"])
    write_csv(out / "dynkin_hunt.csv", [{"t": p["t"], "x0": x0, "y": y, **r}])
    z = abs(r["residual"]) / r["stderr"] if r["stderr"] > 0 else (0.0 if r["residual"] == 0 else math.inf)
    return {"residual_within": z <= p["z_max"]}, {**r, "z": z}


def _levy_f(env, B, kind, threshold):
    n = env.n
    I = np.arange(n)
    rho = env.sites.distance_block(I, I)
    if kind == "long_jumps":
        F = (rho > threshold).astype(float)
    elif kind == "jump_length":
        F = rho.copy()
    else:
        inB = np.zeros(n, bool)
        inB[B] = True
        F = (inB[:, None] & ~inB[None, :]).astype(float)
    np.fill_diagonal(F, 0.0)
    return F


def run_levy_system(cfg, p, out):
    from .walk_sim import levy_system_check

    env, x0, B = _ball_corpus(cfg, p)
    _dense(cfg, env.n)
    _samples(cfg, p["nsamples"])
    F = _levy_f(env, B, p["f"], p["threshold"])
    r = levy_system_check(env, B, F, p["nsamples"], cfg.seed, x0)
    write_csv(out / "levy_system.csv", [{"f": p["f"], "x0": x0, **r}])
    z = abs(r["residual"]) / r["stderr"] if r["stderr"] > 0 else (0.0 if r["residual"] == 0 else math.inf)
    return {"residual_within": z <= p["z_max"]}, {**r, "z": z}


def run_green(cfg, p, out):
    from .green_harnack import green_function

    env = _env(cfg)
    x0 = _site(env, p["x0"])
    B = env.sites.ball(x0, p["B_radius"])
    _dense(cfg, B.size)
    g = green_function(env, B, x0, exterior=p["exterior"])
    rho = env.sites.distance(x0, g.B)
    rows = [{"site": int(s), **{k: int(v[i]) for k, v in _coords(env, g.B).items()},
             "rho": float(rho[i]), "G": float(g.values[i])} for i, s in enumerate(g.B)]
    write_csv(out / "green.csv", rows)
    hi = p["fit_max"] if p["fit_max"] is not None else p["B_radius"] / 4
    m = (rho >= p["fit_min"]) & (rho <= hi)
    slope, intercept = np.polyfit(np.log(rho[m]), np.log(g.values[m]), 1)
    target = -(env.d - env.alpha)
    # the dual method integrates p^B over time, on a sub-ball when requested
    Bd = B if p["dual_radius"] is None else env.sites.ball(x0, p["dual_radius"])
    a = g if p["dual_radius"] is None else green_function(env, Bd, x0, exterior=p["exterior"])
    b = green_function(env, Bd, x0, method="time_integral", exterior=p["exterior"])
    dual = float(np.max(np.abs(a.values - b.values)) / np.max(np.abs(a.values)))
    checks = {"slope": abs(slope - target) <= p["slope_tolerance"],
              "dual_agreement": dual <= p["dual_tolerance"]}
    return checks, {"slope": float(slope), "intercept": float(intercept), "target": target,
                    "fit_range": [p["fit_min"], hi], "npoints": int(m.sum()),
                    "dual_relative_error": dual, "dual_sites": int(Bd.size),
                    "Theta": g.Theta, "ball_size": int(B.size)}


def run_harnack(cfg, p, out):
    from .green_harnack import harnack_ratios
    from .lattice_env import ConductanceLaw, LatticeSpec, sample_environment

    e = cfg.environment
    law = ConductanceLaw.from_dict({"variant": e.law.variant, **e.law.params})
    rows, ehi, wehi = [], [], []
    for seed in e.seeds:
        if p["box_factor"] is None:
            envs = [(_env(cfg, seed), list(p["R_grid"]))]
        else:
            # one box per radius, L proportional to R, so the geometry is scale-similar
            envs = []
            for R in p["R_grid"]:
                spec = LatticeSpec(e.lattice.d1, e.lattice.d2, int(math.ceil(p["box_factor"] * R)),
                                   e.lattice.metric, e.lattice.boundary, cfg.caps.max_sites)
                envs.append((sample_environment(law, spec, e.mu_mode, seed=seed, alpha=e.alpha), [R]))
        e_row, w_row = [], []
        for env, Rs in envs:
            x0 = _site(env, p["x0"])
            _dense(cfg, env.sites.ball(x0, 2 * max(Rs)).size)
            k = env.n if p["n_exterior"] is None else p["n_exterior"]
            rep = harnack_ratios(env, x0, Rs, n_exterior=k, seed=cfg.seed)
            for i, R in enumerate(rep.R):
                rows.append({"seed": seed, "R": R, "L": env.spec.L, "ehi": rep.ehi[i],
                             "wehi": rep.wehi[i], "zero_inf": rep.zero_inf[i],
                             "n_functions": rep.n_functions[i], "ball_size": rep.ball_size[i]})
            e_row += rep.ehi
            w_row += rep.wehi
        ehi.append(e_row)
        wehi.append(w_row)
    write_csv(out / "harnack.csv", rows)
    ehi, wehi = np.array(ehi), np.array(wehi)
    med_e, med_w = np.nanmedian(ehi, 0), np.nanmedian(wehi, 0)
    checks = {}
    if p["expect"] == "ehi_failure":
        checks["ehi_grows"] = bool(med_e[-1] > med_e[0])
        checks["wehi_bounded"] = bool(med_w[-1] < p["wehi_factor"] * med_w[0])
    elif p["expect"] == "ehi_holds":
        checks["ehi_bounded"] = bool(np.nanmax(med_e) <= p["ehi_factor"] * med_e[0])
    return checks, {"R": list(p["R_grid"]), "median_ehi": med_e, "median_wehi": med_w}


def run_ehi_condition(cfg, p, out):
    from .green_harnack import ehi_necessary_condition

    env = _env(cfg)
    x0 = _site(env, p["x0"])
    r = ehi_necessary_condition(env, x0, p["R"], p["theta_prime"])
    write_csv(out / "ehi_condition.csv", r["annuli"])
    return {}, {k: v for k, v in r.items() if k != "annuli"}


def run_trap_return(cfg, p, out):
    from .green_harnack import trap_scaling
    from .lattice_env import LatticeSpec

    e = cfg.environment
    spec = LatticeSpec(e.lattice.d1, e.lattice.d2, e.lattice.L, e.lattice.metric,
                       e.lattice.boundary, cfg.caps.max_sites)
    if 2 ** max(p["N_grid"]) > cfg.caps.step_budget:
        raise CapError(f"2n = 2^{max(p['N_grid'])} exceeds caps.step_budget")
    _dense(cfg, spec.n_sites)
    res = trap_scaling(p["N_grid"], spec, p["eps"], e.alpha)
    write_csv(out / "trap_return.csv", res["rows"])
    exc = np.array([r["excursion_scaled"] for r in res["rows"]])
    checks = {"bounded_below": res["min_scaled"] >= res["first_scaled"] / p["band"],
              "excursion_within_band": float(exc.max() / exc.min()) <= p["band"]}
    return checks, {k: v for k, v in res.items() if k != "rows"} | {
        "excursion_max_over_min": float(exc.max() / exc.min())}


def run_llt(cfg, p, out):
    from .lattice_env import ConductanceLaw
    from .stable_reference import llt_error

    e = cfg.environment
    if e.lattice.d2 != 1 or e.lattice.d1 != 0:
        raise ValueError("the local limit experiment runs on Z (d1=0, d2=1)")
    law = ConductanceLaw.from_dict({"variant": e.law.variant, **e.law.params})
    rep = llt_error(law, e.seeds, p["n_grid"], tuple(p["t_window"]), p["k_radius"], e.alpha,
                    1, p["n_t"], p["x_step"], None, p["budget"], p["tol"])
    for L in rep.L:
        _dense(cfg, 2 * L + 1)
    write_csv(out / "llt.csv", rep.rows())
    d = rep.to_dict()
    return {"strictly_decreasing": rep.decreasing}, d


RUNNERS = {
    "assumptions": run_assumptions, "heat-kernel": run_heat_kernel,
    "bounds-check": run_bounds_check, "exit-times": run_exit_times,
    "dynkin-hunt": run_dynkin_hunt, "levy-system": run_levy_system, "green": run_green,
    "harnack": run_harnack, "ehi-condition": run_ehi_condition,
    "trap-return": run_trap_return, "llt": run_llt,
}


def run(cfg, out=None):
    """Run one experiment; returns (status, summary)."""
    from .lattice_env import SiteCapError
    from .markov_core import ResourceCapError

    out = Path(out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", {"manifest_version": MANIFEST_VERSION,
                                       "config": cfg.resolved(), "versions": _versions()})
    try:
        checks, details = RUNNERS[cfg.experiment](cfg, cfg.params, out)
    except (CapError, ResourceCapError, SiteCapError, MemoryError) as exc:
        summary = {"experiment": cfg.experiment, "status": 3, "error": str(exc)}
        write_json(out / "summary.json", summary)
        return 3, summary
    checks = {k: bool(v) for k, v in checks.items()}
    ok = all(checks.values())
    summary = {"experiment": cfg.experiment, "pass": ok, "checks": checks, "details": details,
               "status": 0 if ok else 1}
    write_json(out / "summary.json", summary)
    return summary["status"], summary


# -- plot data -----------------------------------------------------------------

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


PLOT_INPUTS = {
    "bounds-check": ["bounds.csv"], "exit-times": ["exit_times.csv"], "harnack": ["harnack.csv"],
    "llt": ["llt.csv"], "green": ["green.csv"], "trap-return": ["trap_return.csv"],
    "heat-kernel": ["heat_kernel.csv"], "assumptions": ["assumptions_grid.csv"],
    "dynkin-hunt": ["dynkin_hunt.csv"], "levy-system": ["levy_system.csv"],
    "ehi-condition": ["ehi_condition.csv"],
}


def emit_plot_data(results):
    """Write tidy (experiment, series, x, y, stderr) tables into ``results/plot_data``.

    Returns the list of files written; raises FileNotFoundError naming the
    missing inputs.
    """
    results = Path(results)
    man = results / "manifest.json"
    if not man.exists():
        raise FileNotFoundError(f"missing inputs: {man}")
    exp = json.loads(man.read_text())["config"]["experiment"]
    missing = [str(results / f) for f in PLOT_INPUTS[exp] if not (results / f).exists()]
    if missing:
        raise FileNotFoundError("missing inputs: " + ", ".join(missing))
    dest = results / "plot_data"
    dest.mkdir(exist_ok=True)
    tidy, written = [], []

    def add(series, x, y, se=""):
        tidy.append({"experiment": exp, "series": series, "x": x, "y": y, "stderr": se})

    if exp == "bounds-check":
        rows = _read_csv(results / "bounds.csv")
        wide = [{k: r[k] for k in ("t", "rho", "p", "phi", "ratio")} for r in rows]
        write_csv(dest / "bounds_profile.csv", wide, ["t", "rho", "p", "phi", "ratio"])
        written.append(dest / "bounds_profile.csv")
        for r in rows:
            add(f"p/phi t={r['t']}", r["rho"], r["ratio"])
    elif exp == "llt":
        rows = _read_csv(results / "llt.csv")
        write_csv(dest / "llt_error.csv", rows, ["n", "seed", "sup_error"])
        written.append(dest / "llt_error.csv")
        for r in rows:
            add(f"seed={r['seed']}", r["n"], r["sup_error"])
    elif exp == "exit-times":
        for r in _read_csv(results / "exit_times.csv"):
            add("mean_exit_time", r["r"], r["mean"], r["stderr"])
    elif exp == "harnack":
        for r in _read_csv(results / "harnack.csv"):
            add(f"ehi seed={r['seed']}", r["R"], r["ehi"])
            add(f"wehi seed={r['seed']}", r["R"], r["wehi"])
    elif exp == "green":
        for r in _read_csv(results / "green.csv"):
            add("G", r["rho"], r["G"])
    elif exp == "trap-return":
        for r in _read_csv(results / "trap_return.csv"):
            add("P_return_scaled", r["N"], r["scaled"])
            add("excursion_scaled", r["N"], r["excursion_scaled"])
    elif exp == "heat-kernel":
        for r in _read_csv(results / "heat_kernel.csv"):
            add(f"p t={r['t']}", r["rho"], r["p"])
    elif exp == "assumptions":
        for r in _read_csv(results / "assumptions_grid.csv"):
            add(f"vol_hi R={r['R']}", r["r"], r["vol_hi"])
            add(f"vol_lo R={r['R']}", r["r"], r["vol_lo"])
    elif exp in ("dynkin-hunt", "levy-system"):
        for r in _read_csv(results / PLOT_INPUTS[exp][0]):
            add("residual", 0, r["residual"], r["stderr"])
    elif exp == "ehi-condition":
        for r in _read_csv(results / "ehi_condition.csv"):
            add("max_ratio", r["k"], r["max_ratio"])
    path = dest / f"{exp}_tidy.csv"
    write_csv(path, tidy, ["experiment", "series", "x", "y", "stderr"])
    written.append(path)
    return [str(p) for p in written]


# -- command line --------------------------------------------------------------

def _errors(exc):
    if isinstance(exc, ValidationError):
        return [{"field": ".".join(str(x) for x in e["loc"]), "message": e["msg"]} for e in exc.errors()]
    return [{"field": None, "message": str(exc)}]


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "plot-data":
        ap = argparse.ArgumentParser(prog="rcmlab plot-data")
        ap.add_argument("results")
        args = ap.parse_args(argv[1:])
        try:
            for f in emit_plot_data(args.results):
                print(f)
        except (FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
            print(json.dumps({"errors": _errors(exc)}), file=sys.stderr)
            return 2
        return 0
    ap = argparse.ArgumentParser(prog="rcmlab", description="Random conductance model experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON config or manifest")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", required=True)
    ap.add_argument("--threads", type=int, help="thread cap (overrides RCMLAB_THREADS)")
    args = ap.parse_args(argv)
    from ._accel import set_threads

    set_threads(args.threads)
    try:
        cfg = load_config(args.config, args.experiment, args.set, args.out)
    except (ValidationError, ValueError, OSError) as exc:
        print(json.dumps({"errors": _errors(exc)}, indent=2), file=sys.stderr)
        return 2
    try:
        status, summary = run(cfg)
    except ValueError as exc:
        print(json.dumps({"errors": _errors(exc)}, indent=2), file=sys.stderr)
        return 2
    print(json.dumps({"experiment": cfg.experiment, "status": status,
                      "checks": summary.get("checks", {})}, sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
