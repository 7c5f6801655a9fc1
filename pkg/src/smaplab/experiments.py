"""Experiment configuration, initial data and pipeline orchestration."""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .direct import DirectConfig, evolve_direct
from .gauge import gauge_data
from .gauged import GaugedConfig, evolve_gauged
from .modulation import ADMISSION_DELTA, deficit, solve_scaling_pair
from .radial import DEFAULT_N, DEFAULT_R_MAX, DEFAULT_R_MIN, RadialGrid, build_grid
from .reconstruct import GaugedState, save_state
from .sphere import (
    EquivariantMap,
    HarmonicParams,
    dist_h1,
    harmonic_map,
    load_profile,
    log_bump,
    perturbed_map,
    save_profile,
    stationarity_residual,
)
from .trajectory import dumps_exact, write_jsonl


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    m: int = 2
    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX
    n: int = DEFAULT_N
    spacing: str = "log"
    order: int = 6
    initial: str = "perturbed"
    s: float = 1.0
    alpha: float = 0.0
    delta: float = 0.05
    center: float = 1.0
    width: float = 0.5
    phase: float | None = None
    profile: str | None = None
    pipeline: str = "both"
    dt: float = 1e-3
    T: float = 0.05
    s_floor: float = 1e-3
    admission: float = ADMISSION_DELTA
    reconstruct_every: int = 1
    snapshot_every: int = 0
    closest: bool = True
    n_ladder: list = field(default_factory=lambda: [1024, 2048, 4096])
    dt_ladder: list = field(default_factory=lambda: [4e-3, 2e-3, 1e-3])
    converge_pipeline: str = "direct"
    seed: int = 0
    out: str = "out"

    def grid(self, n: int | None = None) -> RadialGrid:
        return build_grid(self.r_min, self.r_max, n or self.n, self.spacing, self.order)

    def validate(self):
        if self.m < 1:
            raise ConfigError("m must be a positive integer")
        if self.initial not in ("harmonic", "perturbed", "file"):
            raise ConfigError(f"unknown initial data kind {self.initial!r}")
        if self.pipeline not in ("direct", "gauged", "both"):
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if self.initial == "perturbed" and not 0 <= self.delta <= self.admission:
            raise ConfigError(f"delta={self.delta} outside [0, admission={self.admission}]")
        if self.initial == "file":
            if not self.profile:
                raise ConfigError("initial=file needs a profile path")
            if not Path(self.profile).is_file():
                raise ConfigError(f"profile file not found: {self.profile}")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("dt and T must be positive")
        return self


_SECTIONS = {
    "grid": ("r_min", "r_max", "n", "spacing", "order"),
    "initial": ("m", "initial", "s", "alpha", "delta", "center", "width", "phase", "profile"),
    "run": ("pipeline", "dt", "T", "s_floor", "admission", "reconstruct_every", "snapshot_every", "closest", "seed"),
    "converge": ("n_ladder", "dt_ladder", "converge_pipeline"),
    "output": ("out",),
}
_ALIASES = {("initial", "kind"): "initial", ("converge", "pipeline"): "converge_pipeline", ("output", "dir"): "out"}


def _convert(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    t = str(types[name])
    raw = raw.strip()
    if name in ("n_ladder",):
        return [int(x) for x in raw.replace(",", " ").split()]
    if name in ("dt_ladder",):
        return [float(x) for x in raw.replace(",", " ").split()]
    if t.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return None if raw.lower() in ("", "none", "random") else float(raw)
    return raw


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = ExperimentConfig()
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            name = _ALIASES.get((sec, key), key)
            name = {k.lower(): k for k in _SECTIONS[sec]}.get(name.lower(), name)
            if name not in _SECTIONS[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            try:
                setattr(cfg, name, _convert(name, raw))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from exc
    if cfg.initial == "file" and cfg.profile and not Path(cfg.profile).is_absolute():
        cfg.profile = str(path.parent / cfg.profile)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- initial data -------------------------------------------------------------


def perturbation_with_deficit(m: int, grid: RadialGrid, delta: float, center=1.0, width=0.5, phase=0.0, params=HarmonicParams()):
    """Perturbed harmonic map whose energy deficit sqrt(E - 4 pi m) equals delta."""
    unit = np.exp(1j * phase)

    def build(c):
        return perturbed_map(m, lambda r: c * unit * log_bump(r, center, width), grid, params)

    if delta == 0:
        return build(0.0)
    c = delta
    for _ in range(20):
        d = deficit(build(c))
        if abs(d - delta) <= 1e-12 * delta:
            break
        c *= delta / d
    return build(c)


def initial_map(cfg: ExperimentConfig, grid: RadialGrid | None = None) -> EquivariantMap:
    grid = grid or cfg.grid()
    params = HarmonicParams(cfg.s, cfg.alpha)
    if cfg.initial == "harmonic":
        return harmonic_map(cfg.m, params, grid)
    if cfg.initial == "file":
        u = load_profile(cfg.profile)
        if not u.grid.same_as(grid):
            u = EquivariantMap(u.m, u.sample(grid.r), grid)
        return u
    rng = np.random.default_rng(cfg.seed)
    phase = cfg.phase if cfg.phase is not None else float(rng.uniform(0.0, 2.0 * math.pi))
    return perturbation_with_deficit(cfg.m, grid, cfg.delta, cfg.center, cfg.width, phase, params)


def gauged_initial(u: EquivariantMap, admission: float = ADMISSION_DELTA) -> GaugedState:
    gd = gauge_data(u)
    st = solve_scaling_pair(u, admission=admission)
    return GaugedState(u.grid, gd.q, st.s, st.alpha)


# -- runs -------------------------------------------------------------------------


@dataclass
class RunResult:
    direct: object = None
    gauged: object = None
    comparison: dict = field(default_factory=dict)

    def trajectories(self):
        return {k: v for k, v in (("direct", self.direct), ("gauged", self.gauged)) if v is not None}


def compare_pipelines(direct, gauged) -> dict:
    """Distances between matched records and the ODE/fit cross-check at t = 0."""
    out = {}
    nd, ng = len(direct.times), len(gauged.times)
    k = min(nd, ng)
    dists = [dist_h1(direct.maps[i], gauged.maps[i]) for i in range(k) if direct.maps[i] is not None and gauged.maps[i] is not None]
    if dists:
        out["max_dist_h1"] = max(dists)
        out["final_dist_h1"] = dists[-1]
    recs = direct.records
    if len(recs) >= 3:
        t = [r.t for r in recs[:3]]
        h = t[1] - t[0]

        def d0(y):
            return (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)

        fit = (d0([r.s_star for r in recs[:3]]), d0([r.alpha_star for r in recs[:3]]))
        norm = (d0([r.s for r in recs[:3]]), d0([r.alpha for r in recs[:3]]))
        ode = (gauged.records[0].extra["ds_dt"], gauged.records[0].extra["dalpha_dt"])
        out["ode_ds_dt"], out["ode_dalpha_dt"] = ode
        out["fit_star_ds_dt"], out["fit_star_dalpha_dt"] = fit
        out["fit_ds_dt"], out["fit_dalpha_dt"] = norm
        out["ode_vs_star_rel"] = [abs(o - f) / abs(f) if f else float("inf") for o, f in zip(ode, fit)]
        out["ode_vs_normalized_rel"] = [abs(o - f) / abs(f) if f else float("inf") for o, f in zip(ode, norm)]
    return out


def run_experiment(cfg: ExperimentConfig, grid: RadialGrid | None = None, keep_maps: bool = True) -> RunResult:
    cfg.validate()
    grid = grid or cfg.grid()
    u0 = initial_map(cfg, grid)
    res = RunResult()
    need_maps = keep_maps or cfg.pipeline == "both"
    if cfg.pipeline in ("direct", "both"):
        dcfg = DirectConfig(dt=cfg.dt, T=cfg.T, s_floor_ratio=cfg.s_floor, closest=cfg.closest, keep_maps=need_maps)
        res.direct = evolve_direct(u0, dcfg)
    if cfg.pipeline in ("gauged", "both"):
        g0 = gauged_initial(u0, cfg.admission)
        gcfg = GaugedConfig(
            dt=cfg.dt,
            T=cfg.T,
            s_floor_ratio=cfg.s_floor,
            reconstruct_every=cfg.reconstruct_every,
            closest=cfg.closest,
            keep_maps=need_maps,
        )
        res.gauged = evolve_gauged(g0, cfg.m, gcfg)
    if res.direct is not None and res.gauged is not None:
        res.comparison = compare_pipelines(res.direct, res.gauged)
    return res


def write_outputs(res: RunResult, cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    summary = {"m": cfg.m, "seed": cfg.seed, "pipelines": {}}
    for name, traj in res.trajectories().items():
        write_jsonl(out / f"trajectory_{name}.jsonl", traj.records)
        summary["pipelines"][name] = traj.summary()
        if cfg.snapshot_every > 0:
            snap = out / f"snapshots_{name}"
            snap.mkdir(exist_ok=True)
            for i in range(0, len(traj.times), cfg.snapshot_every):
                if name == "gauged":
                    save_state(snap / f"state_{i:06d}.txt", traj.states[i], cfg.m)
                elif traj.maps[i] is not None:
                    save_profile(snap / f"profile_{i:06d}.txt", traj.maps[i])
    if res.comparison:
        summary["comparison"] = res.comparison
    (out / "summary.json").write_text(dumps_exact(summary) + "\n")
    return summary


# -- convergence ---------------------------------------------------------------------


def _final_map(traj):
    return traj.maps[-1]


def observed_orders(errors, ratio=2.0):
    """log_ratio(e_{k-1}/e_k) for each entry; nan for the first and for non-positive data."""
    out = [float("nan")]
    for a, b in zip(errors[:-1], errors[1:]):
        ok = a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)
        out.append(math.log(a / b) / math.log(ratio) if ok else float("nan"))
    return out


def run_convergence(cfg: ExperimentConfig, which: str = "both"):
    """Rows for the dt ladder (fixed grid) and the n ladder (fixed dt).

    Self-differences compare consecutive rungs; the finest rung serves as the
    reference for the grid ladder after sampling onto the coarser grid.
    """
    if len(cfg.dt_ladder) < 3 and which in ("both", "dt"):
        raise ConfigError("need >= 3 refinements in dt_ladder")
    if len(cfg.n_ladder) < 3 and which in ("both", "n"):
        raise ConfigError("need >= 3 refinements in n_ladder")
    rows = []
    ladders = []
    if which in ("both", "dt"):
        ladders.append(("dt", [(cfg.n, dt) for dt in cfg.dt_ladder]))
    if which in ("both", "n"):
        ladders.append(("n", [(n, cfg.dt) for n in cfg.n_ladder]))
    for name, rungs in ladders:
        results = []
        for n, dt in rungs:
            sub = ExperimentConfig(**{**cfg.__dict__, "n": n, "dt": dt, "pipeline": cfg.converge_pipeline, "closest": False})
            res = run_experiment(sub)
            traj = res.direct if res.direct is not None else res.gauged
            u = _final_map(traj)
            e0 = traj.records[0].energy
            drift = max(abs(r.energy - e0) for r in traj.records) / e0
            cross = res.comparison.get("final_dist_h1", float("nan"))
            results.append((n, dt, u, drift, cross, stationarity_residual(u), traj.halt_reason))
        diffs = [float("nan")]
        for (_, _, ua, *_), (_, _, ub, *_) in zip(results[:-1], results[1:]):
            ub_on_a = EquivariantMap(ub.m, ub.sample(ua.grid.r), ua.grid) if not ua.grid.same_as(ub.grid) else ub
            diffs.append(dist_h1(ua, ub_on_a))
        ratio = rungs[0][1] / rungs[1][1] if name == "dt" else (rungs[1][0] - 1) / (rungs[0][0] - 1)
        orders = [float("nan")] + observed_orders(diffs[1:], ratio)
        drift_orders = observed_orders([r[3] for r in results], ratio)
        for k, (n, dt, _, drift, cross, stat, halt) in enumerate(results):
            rows.append(
                {
                    "ladder": name,
                    "rung": k,
                    "n": n,
                    "dt": dt,
                    "halt_reason": halt,
                    "energy_drift": drift,
                    "energy_drift_order": drift_orders[k],
                    "cross_distance": cross,
                    "stationarity_residual": stat,
                    "self_difference": diffs[k],
                    "observed_order": orders[k],
                }
            )
    return rows


def write_csv(path, rows) -> None:
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


def config_dict(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(cfg.__dict__))
