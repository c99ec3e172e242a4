"""Baselines, Monte-Carlo search and the experiment runner."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import padd, scenarios
from .channel import ShadowingTable, draw_shadowing, ground_link_terms, zero_shadowing
from .metrics import alpha_fair_utility, jain_index, score_gain
from .model import (NetworkState, RngStream, SystemConfig, Topology, as_generator, check_feasibility,
                    config_from_dict, config_to_dict)

ALPHA_NAMES = {0.0: "0", 1.0: "1", math.inf: "inf"}


def parse_alpha(x) -> float:
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity", "maxmin"):
        return math.inf
    return float(x)


def alpha_name(a: float) -> str:
    return ALPHA_NAMES.get(float(a), repr(float(a)))


def _shadows(topology, shadows, n_drones):
    if shadows is not None:
        return shadows
    return zero_shadowing(topology.n_gbs, topology.n_users, n_drones)


# -------------------------------------------------------------- baselines

def ground_only(topology: Topology, cfg: SystemConfig, alpha: float = 1.0,
                shadows: Optional[ShadowingTable] = None) -> NetworkState:
    """Network without drones."""
    sh = _shadows(topology, shadows, 0)
    return padd.evaluate(np.zeros((0, 3)), topology, cfg, sh, alpha).state


def sample_fleet(lattice: padd.Lattice, n_drones: int, rng) -> np.ndarray:
    """Uniform random fleet on distinct lattice points."""
    g = as_generator(rng)
    while True:
        idx = g.integers(len(lattice), size=n_drones)
        if np.unique(idx).size == n_drones:
            return lattice.points[idx].copy()


@dataclass
class MonteCarloResult:
    alpha: float
    best: padd.Evaluation
    positions: np.ndarray
    best_run: int
    runs: int
    running_best: list = field(default_factory=list)    # best utility after each run

    @property
    def state(self) -> NetworkState:
        return self.best.state


def monte_carlo_search(topology: Topology, cfg: SystemConfig, runs: int, rng, alphas=(1.0,),
                       n_drones: Optional[int] = None, shadows: Optional[ShadowingTable] = None,
                       keep_history: bool = False) -> dict:
    """Best of `runs` uniform random fleets on the probe lattice, for each alpha.

    All alphas score the same sampled fleets; the alpha-free link stage is
    computed once per sample.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    A = topology.n_drones if n_drones is None else n_drones
    sh = _shadows(topology, shadows, A)
    lat = padd.Lattice(topology.area, cfg)
    gt = ground_link_terms(topology, cfg, sh)
    g = as_generator(rng)
    alphas = [float(a) for a in alphas]
    best = {a: None for a in alphas}
    hist = {a: [] for a in alphas}
    for r in range(runs):
        pos = sample_fleet(lat, A, g)
        links = padd.link_stage(pos, topology, cfg, sh, gt)
        for a in alphas:
            ev = padd.evaluate(pos, topology, cfg, sh, a, links=links)
            cur = best[a]
            if cur is None or score_gain(ev.score, cur.best.score, a) > 0:
                best[a] = MonteCarloResult(a, ev, pos, r, runs)
            if keep_history:
                hist[a].append(best[a].best.utility)
    for a in alphas:
        best[a].running_best = hist[a]
    return best


def monte_carlo_optimum(topology: Topology, cfg: SystemConfig, runs: int, rng, alpha: float = 1.0,
                        n_drones: Optional[int] = None,
                        shadows: Optional[ShadowingTable] = None) -> NetworkState:
    return monte_carlo_search(topology, cfg, runs, rng, (alpha,), n_drones, shadows)[float(alpha)].state


def exhaustive_lattice_optimum(topology: Topology, cfg: SystemConfig, alpha: float = 1.0,
                               n_drones: int = 1, shadows: Optional[ShadowingTable] = None):
    """Best fleet over all distinct lattice placements; feasible only for 1-2 drones on small areas."""
    import itertools
    sh = _shadows(topology, shadows, n_drones)
    lat = padd.Lattice(topology.area, cfg)
    gt = ground_link_terms(topology, cfg, sh)
    best = None
    for combo in itertools.combinations(range(len(lat)), n_drones):
        ev = padd.evaluate(lat.points[list(combo)], topology, cfg, sh, alpha, gt)
        if best is None or score_gain(ev.score, best.score, alpha) > 0:
            best = ev
    return best


def ra_baseline(topology: Topology, cfg: SystemConfig, rng=None, n_drones: Optional[int] = None,
                shadows: Optional[ShadowingTable] = None, initial=None) -> np.ndarray:
    """Force-field placement: users pull with weight 1/SNR, gBSs push with (r0/d)^2.

    The pull is the 1/SNR-weighted mean of unit vectors toward users, where SNR
    is each user's best ground SNR; the push from each gBS is (r0/d)^2 along the
    unit vector away from it (r0 = ra_repulsion_m). Drones step ra_step_m along
    the net force for up to ra_max_iter steps, keeping their altitude. This
    concretizes a baseline described only qualitatively.
    """
    A = topology.n_drones if n_drones is None else n_drones
    if initial is None:
        pos = padd.initial_placement(topology, cfg, rng, A)
    else:
        pos = np.array(initial, dtype=float).reshape(-1, 3)
    if A == 0:
        return pos
    sh = _shadows(topology, shadows, A)
    ax, ay = topology.area
    if topology.n_users:
        snr = ground_link_terms(topology, cfg, sh)[1].max(axis=0) if topology.n_gbs else \
            np.ones(topology.n_users)
        w = 1.0 / np.maximum(snr, 1e-30)
        w = w / w.sum()
    for _ in range(cfg.ra_max_iter):
        moved = 0.0
        for a in range(A):
            p = pos[a, :2]
            f = np.zeros(2)
            if topology.n_users:
                d = topology.user_xy - p
                n = np.hypot(d[:, 0], d[:, 1])
                ok = n > 1e-9
                f += (w[ok, None] * d[ok] / n[ok, None]).sum(axis=0)
            if topology.n_gbs:
                d = p - topology.gbs_xy
                n = np.maximum(np.hypot(d[:, 0], d[:, 1]), 1.0)
                f += (((cfg.ra_repulsion_m / n) ** 2 / n)[:, None] * d).sum(axis=0)
            norm = float(np.hypot(*f))
            if norm < 1e-12:
                continue
            new = np.clip(p + cfg.ra_step_m * f / norm, [0.0, 0.0], [ax, ay])
            moved = max(moved, float(np.hypot(*(new - p))))
            pos[a, :2] = new
        if moved < 1e-6:
            break
    return pos


# ------------------------------------------------------------- experiments

SCHEMES = ("PADD", "Ground", "MC", "RA")


@dataclass
class ExperimentSpec:
    """Grid of runs: scheme x alpha x fleet size x seed on one scenario preset."""

    scenario: str = "tiny"
    kind: str = "ppp"
    seeds: list = field(default_factory=lambda: [0])
    fleet_sizes: list = field(default_factory=lambda: [2])
    schemes: list = field(default_factory=lambda: ["PADD", "Ground"])
    alphas: list = field(default_factory=lambda: [1.0])
    mc_runs: int = 1000
    max_iter: int = 100
    perturb_m: float = 0.0
    workers: int = 1
    n_users: Optional[int] = None
    config: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        spec = cls(**data)
        spec.alphas = [parse_alpha(a) for a in spec.alphas]
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.scenario not in scenarios.PRESETS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        if self.mc_runs < 1 or self.max_iter < 0 or self.perturb_m < 0 or self.workers < 1:
            raise ValueError("mc_runs >= 1, max_iter >= 0, perturb_m >= 0, workers >= 1 required")
        if any(f < 0 for f in self.fleet_sizes):
            raise ValueError("fleet sizes must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = [alpha_name(a) for a in self.alphas]
        return d


@dataclass
class ExperimentReport:
    spec: dict
    rows: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)   # (run id, step, drone, x, y, h)
    errors: list = field(default_factory=list)

    COLUMNS = ("run", "scenario", "kind", "seed", "scheme", "alpha", "fleet", "utility",
               "aggregate_tput", "min_tput", "jain", "moves", "evaluations",
               "feasible", "stadium_utility", "stadium_aggregate_tput", "stadium_jain",
               "reference_utility", "relative_loss")

    @property
    def feasible(self) -> bool:
        return not self.errors and all(r["feasible"] for r in self.rows)

    def to_dict(self) -> dict:
        clean = [{k: _json_num(r.get(k)) for k in self.COLUMNS} for r in self.rows]
        return {"spec": self.spec, "runs": clean, "errors": self.errors}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    def write(self, outdir) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        self.to_json(out / "report.json")
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_csv_cell(r.get(k)) for k in self.COLUMNS])
        write_trajectories(out / "trajectories.csv", self.trajectories)
        # wall-clock times vary run to run, so they stay out of the reproducible files
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "runtime_s"])
            for r in self.rows:
                w.writerow([r["run"], f"{r['runtime_s']:.6f}"])
        return out


def write_trajectories(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "epoch", "drone", "x", "y", "h"])
        for run, epoch, a, x, y, h in rows:
            w.writerow([run, epoch, a, f"{x:.3f}", f"{y:.3f}", f"{h:.3f}"])


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return _json_num(v.item())
    return v


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def subset_metrics(state: NetworkState, mask) -> dict:
    """Utility, total rate and Jain's index over the served users selected by mask."""
    sel = np.asarray(mask, dtype=bool) & state.served
    t = state.user_tput[sel]
    if t.size == 0:
        return {"utility": math.nan, "aggregate_tput": 0.0, "jain": math.nan}
    return {"utility": alpha_fair_utility(t, state.alpha), "aggregate_tput": float(t.sum()),
            "jain": jain_index(t) if t.any() else math.nan}


def _run_id(seed, scheme, alpha, fleet) -> str:
    return f"{scheme}-a{alpha_name(alpha)}-A{fleet}-s{seed}"


def run_one(spec: ExperimentSpec, cfg: SystemConfig, seed: int, scheme: str, alpha: float, fleet: int):
    """One grid cell; returns (row, trajectory rows)."""
    inst = scenarios.build_instance(spec.scenario, seed, spec.kind, cfg, n_drones=fleet,
                                    n_users=spec.n_users)
    topo, sh = inst.topology, inst.shadows
    rid = _run_id(seed, scheme, alpha, fleet)
    rng = RngStream(seed, f"run/{scheme}/{alpha_name(alpha)}/{fleet}")
    t0 = time.perf_counter()
    row = {"run": rid, "scenario": spec.scenario, "kind": spec.kind, "seed": seed, "scheme": scheme,
           "alpha": alpha_name(alpha), "fleet": fleet, "moves": 0, "evaluations": 1}
    traj = []
    if scheme == "Ground" or (fleet == 0 and scheme != "Ground"):
        ev = padd.evaluate(np.zeros((0, 3)), topo, cfg, sh, alpha)
    elif scheme == "PADD":
        if spec.perturb_m > 0:
            noisy = topo.with_users(scenarios.perturb_positions(topo.user_xy, spec.perturb_m,
                                                                rng.child("perturb"), topo.area))
            _, tr = padd.optimize(noisy, cfg, rng, spec.max_iter, alpha, sh, n_drones=fleet)
            ev = padd.evaluate(tr.evaluation.state.topology.drone_xyz, topo, cfg, sh, alpha)
            _, ref = padd.optimize(topo, cfg, rng, spec.max_iter, alpha, sh, n_drones=fleet)
            u_ref = ref.evaluation.utility
            row["reference_utility"] = u_ref
            row["relative_loss"] = (u_ref - ev.utility) / max(abs(u_ref), 1e-9)
        else:
            _, tr = padd.optimize(topo, cfg, rng, spec.max_iter, alpha, sh, n_drones=fleet)
            ev = tr.evaluation
        row["moves"] = tr.n_moves
        row["evaluations"] = tr.evaluations
        for step, fl in enumerate(tr.positions):
            traj += [(rid, step, a, *map(float, p)) for a, p in enumerate(fl)]
    elif scheme == "MC":
        res = monte_carlo_search(topo, cfg, spec.mc_runs, rng, (alpha,), fleet, sh)[alpha]
        ev = res.best
        row["evaluations"] = spec.mc_runs
    elif scheme == "RA":
        pos = ra_baseline(topo, cfg, rng, fleet, sh)
        ev = padd.evaluate(pos, topo, cfg, sh, alpha)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    st = ev.state
    rep = check_feasibility(st, ev.budget, cfg)
    row.update(utility=st.utility, aggregate_tput=st.aggregate_tput, min_tput=st.min_tput, jain=st.jain,
               runtime_s=time.perf_counter() - t0, feasible=bool(rep))
    if inst.stadium is not None:
        (cx, cy), r = inst.stadium
        inside = np.hypot(topo.user_xy[:, 0] - cx, topo.user_xy[:, 1] - cy) <= r
        m = subset_metrics(st, inside)
        row.update(stadium_utility=m["utility"], stadium_aggregate_tput=m["aggregate_tput"],
                   stadium_jain=m["jain"])
    if not rep:
        row["diagnostics"] = rep.summary()
    if scheme != "PADD" and fleet:
        traj += [(rid, 0, a, *map(float, p)) for a, p in enumerate(st.topology.drone_xyz)]
    return row, traj


def run_experiment(spec: ExperimentSpec, cfg: Optional[SystemConfig] = None) -> ExperimentReport:
    """Execute the grid; rows come back in grid order whatever the worker count.

    Infeasible runs are reported with their constraint diagnostics.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    spec.validate()
    if cfg is None:
        cfg = config_from_dict(spec.config)
    grid = [(s, sc, float(a), f) for s in spec.seeds for f in spec.fleet_sizes
            for sc in spec.schemes for a in spec.alphas]
    # Ground ignores the fleet: one run per seed and alpha
    seen, cells = set(), []
    for s, sc, a, f in grid:
        key = (s, sc, a, 0 if sc == "Ground" else f)
        if key not in seen:
            seen.add(key)
            cells.append(key)

    def work(cell):
        return run_one(spec, cfg, *cell)

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    d = spec.to_dict()
    d.pop("workers")    # execution detail; reports must match across thread counts
    d["config"] = config_to_dict(cfg)
    report = ExperimentReport(d)
    for row, traj in results:
        report.rows.append(row)
        report.trajectories += traj
        if not row["feasible"]:
            report.errors.append({"run": row["run"], "diagnostics": row.get("diagnostics", "")})
    return report


# ------------------------------------------------------------------ Event

def run_event(cfg: SystemConfig, seed: int = 0, epochs: int = 15, n_drones: int = 5, alpha: float = 1.0,
              n_gbs: int = 10, area=(4000.0, 2500.0), event: scenarios.EventConfig = scenarios.EventConfig(),
              max_iter: int = 100, workers: int = 1):
    """Dynamic Event: re-optimize every arrival period from the previous fleet positions.

    Returns (per-epoch summaries, trajectory rows, traces). Shadowing is
    redrawn each epoch since the user set changes.
    """
    root = RngStream(seed, "event")
    gbs = scenarios.default_gbs_layout(area, n_gbs, root.child("gbs"))
    st = scenarios.new_event(area, root.child("users"), event)
    mob = root.child("mobility")
    pos = None
    summaries, traj, traces = [], [], []
    for ep in range(epochs + 1):
        topo = Topology(gbs, cfg.tau_g_bps, st.xy, np.zeros((0, 3)), area)
        sh = draw_shadowing(n_gbs, topo.n_users, n_drones, cfg, root.child(f"shadowing/{ep}"))
        state, tr = padd.optimize(topo, cfg, root.child(f"padd/{ep}"), max_iter, alpha, sh, initial=pos,
                                  workers=workers, n_drones=n_drones)
        pos = state.topology.drone_xyz.copy()
        rep = check_feasibility(state, tr.evaluation.budget, cfg)
        summaries.append({"epoch": ep, "time_s": st.time_s, "users": topo.n_users,
                          "utility": state.utility, "aggregate_tput": state.aggregate_tput,
                          "jain": state.jain, "moves": tr.n_moves, "feasible": bool(rep)})
        traj += [("event", ep, a, *map(float, p)) for a, p in enumerate(pos)]
        traces.append(tr)
        if ep < epochs:
            st = scenarios.step_event(st, event.arrival_period_s, cfg, mob)
    return summaries, traj, traces
