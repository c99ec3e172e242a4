"""Extremal-optimization placement of the drone fleet.

The loop repeatedly takes the least fit drone, probes lattice points in a
ball around it and moves it to the first probe that raises the network
utility by more than `delta` (relative). After a move with gain below
`epsilon` the search stops. A drone whose ball is searched out without an
improvement is marked stuck and the next least fit drone is tried; when
every drone is stuck the search has converged.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .allocation import InfeasibleError, allocate_no_drones, solve_packed
from .association import (AssociationResult, BackhaulAssignment, associate_users, gap_knap,
                          weight_matrix)
from .channel import (ShadowingTable, compute_link_budget, draw_shadowing, ground_link_terms,
                      with_backhaul_beams)
from .metrics import (DroneFitness, alpha_fair_utility, is_degenerate, jain_index,
                      least_fit_drone, score_gain)
from .model import LinkBudget, NetworkState, RngStream, SystemConfig, Topology, as_generator


# ---------------------------------------------------------------- lattice

class Lattice:
    """Uniform 3D grid over the area and altitude range.

    The spacing is chosen so that a ball of radius `ball_radius_m` holds about
    `probe_lattice_n` cells: s = (4/3 pi R^3 / N)^(1/3). Points are numbered
    flat, x slowest and altitude fastest.
    """

    def __init__(self, area, cfg: SystemConfig):
        R, N = cfg.ball_radius_m, cfg.probe_lattice_n
        s = (4.0 / 3.0 * math.pi * R ** 3 / N) ** (1.0 / 3.0)
        ax, ay = float(area[0]), float(area[1])
        nx = max(1, int(math.floor(ax / s)) + 1)
        ny = max(1, int(math.floor(ay / s)) + 1)
        nz = max(2, int(round((cfg.h_max_m - cfg.h_min_m) / s)) + 1)
        # centre the x/y grid inside the area
        self.xs = (ax - (nx - 1) * s) / 2.0 + s * np.arange(nx)
        self.ys = (ay - (ny - 1) * s) / 2.0 + s * np.arange(ny)
        self.zs = np.linspace(cfg.h_min_m, cfg.h_max_m, nz)
        self.spacing = s
        self.radius = R
        self.shape = (nx, ny, nz)
        gx, gy, gz = np.meshgrid(self.xs, self.ys, self.zs, indexing="ij")
        self.points = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
        self.points.setflags(write=False)

    def __len__(self):
        return len(self.points)

    def index_of(self, xyz) -> int:
        """Flat index of the grid point nearest to xyz."""
        x, y, z = xyz
        i = int(np.argmin(np.abs(self.xs - x)))
        j = int(np.argmin(np.abs(self.ys - y)))
        k = int(np.argmin(np.abs(self.zs - z)))
        return (i * self.shape[1] + j) * self.shape[2] + k

    def snap(self, xyz) -> np.ndarray:
        return self.points[self.index_of(xyz)].copy()

    def ball(self, center) -> np.ndarray:
        """Flat indices of grid points within the probe radius of `center`, ascending."""
        d2 = ((self.points - np.asarray(center, dtype=float)) ** 2).sum(axis=1)
        return np.flatnonzero(d2 <= self.radius ** 2 * (1 + 1e-12))


# ------------------------------------------------------- initial placement

def initial_placement(topology: Topology, cfg: SystemConfig, rng=None, n_drones: Optional[int] = None,
                      lattice: Optional[Lattice] = None) -> np.ndarray:
    """Greedy pick of well-scored lattice columns at the initial altitude.

    Score = w1 * s / max(d_gBS, s) + w2 * density, where d_gBS is the distance to
    the nearest gBS, s the lattice spacing and density the sum of (1 - d/R)+
    over users, scaled to a maximum of 1. Picks keep at
    least R between each other when possible, then fall back to distinct cells.
    `rng` is accepted for interface symmetry; the placement is deterministic.
    """
    A = topology.n_drones if n_drones is None else int(n_drones)
    lat = lattice or Lattice(topology.area, cfg)
    if A == 0:
        return np.zeros((0, 3))
    k = int(np.argmin(np.abs(lat.zs - cfg.init_altitude_m)))
    cand = lat.points[k::lat.shape[2]]
    xy = cand[:, :2]
    s = lat.spacing
    if topology.n_gbs:
        d = np.sqrt(((xy[:, None, :] - topology.gbs_xy[None, :, :]) ** 2).sum(-1)).min(axis=1)
        near = s / np.maximum(d, s)
    else:
        d = near = np.zeros(len(xy))
    if topology.n_users:
        du = np.sqrt(((xy[:, None, :] - topology.user_xy[None, :, :]) ** 2).sum(-1))
        # triangular kernel so the peak sits on the crowd, not anywhere within reach of it
        dens = np.maximum(0.0, 1.0 - du / cfg.init_density_radius_m).sum(axis=1)
        dens = dens / dens.max() if dens.max() > 0 else dens
    else:
        dens = np.zeros(len(xy))
    score = cfg.init_gbs_weight * near + cfg.init_density_weight * dens
    # ties (e.g. no users) go to the column closest to a gBS
    order = np.lexsort((d, -score))
    if A > len(order):
        raise ValueError(f"{A} drones but only {len(order)} lattice columns")
    for sep in (cfg.init_density_radius_m, s):
        picks = []
        for i in order:
            if all(np.hypot(*(xy[i] - xy[j])) >= sep - 1e-9 for j in picks):
                picks.append(i)
                if len(picks) == A:
                    return cand[picks].copy()
    return cand[order[:A]].copy()


# ---------------------------------------------------------------- probing

def probe(current, visited, cfg: SystemConfig, rng, lattice: Lattice):
    """Random unvisited lattice point in the ball around `current`, or None when exhausted.

    `visited` holds flat lattice indices. The cell under `current` is never returned.
    """
    idx = lattice.ball(current)
    here = lattice.index_of(current)
    if visited:
        skip = np.fromiter(visited, dtype=np.int64, count=len(visited))
        idx = idx[~np.isin(idx, skip)]
    idx = idx[idx != here]
    if idx.size == 0:
        return None
    pick = idx[int(as_generator(rng).integers(idx.size))]
    return lattice.points[pick].copy()


# ------------------------------------------------------------- evaluation

@dataclass
class Evaluation:
    """Everything computed for one fleet configuration."""

    state: NetworkState
    budget: LinkBudget
    association: AssociationResult
    backhaul: BackhaulAssignment
    drone_users: list            # user ids per drone
    allocations: int = 0         # per-gBS programs solved

    @property
    def utility(self) -> float:
        return self.state.utility

    @property
    def score(self):
        return self.state.score


def link_stage(positions, topology: Topology, cfg: SystemConfig, shadows: ShadowingTable,
               ground_terms=None):
    """Fleet-dependent part that does not depend on alpha: SNR budget and cell selection."""
    topo = topology.with_drones(positions)
    if ground_terms is None:
        ground_terms = ground_link_terms(topo, cfg, shadows)
    snr_budget = compute_link_budget(topo, cfg, shadows, None, ground_terms)
    return topo, snr_budget, associate_users(snr_budget, cfg)


def evaluate(positions, topology: Topology, cfg: SystemConfig, shadows: ShadowingTable,
             alpha: float = 1.0, ground_terms=None, links=None) -> Evaluation:
    """Association, backhaul assignment and per-gBS allocation for fixed drone positions.

    Users the association rejects get no resources and are left out of the
    utility. `ground_terms` may carry the precomputed gBS-user link terms and
    `links` a link_stage result for the same positions.
    """
    if links is None:
        links = link_stage(positions, topology, cfg, shadows, ground_terms)
    topo, snr_budget, assoc = links
    G, A, U = topo.n_gbs, topo.n_drones, topo.n_users
    ub = assoc.user_bs
    n_g = np.bincount(ub[(ub >= 0) & (ub < G)], minlength=G)
    n_a = np.bincount(ub[ub >= G] - G, minlength=A)
    W = weight_matrix(snr_budget.backhaul_snr, n_g, n_a, alpha)
    bh = gap_knap(W, cfg.a_g_max)
    budget = with_backhaul_beams(snr_budget, topo, cfg, bh.drone_gbs)

    eff_g = np.log2(1.0 + budget.ground_access_sinr)
    eff_a = np.log2(1.0 + budget.air_access_sinr)
    eff_b = np.log2(1.0 + budget.backhaul_sinr)
    user_bw = np.zeros(U)
    user_tput = np.zeros(U)
    drone_bw = np.zeros(A)
    drone_tput = np.zeros(A)
    # users grouped by stacked BS id
    order = np.argsort(ub, kind="stable")
    cuts = np.searchsorted(ub[order], np.arange(G + A + 1))
    members = [order[cuts[k]:cuts[k + 1]] for k in range(G + A)]
    drone_users = members[G:]
    solved = 0
    for g in range(G):
        gu = members[g]
        ds = np.flatnonzero(bh.drone_gbs == g)
        if gu.size == 0 and ds.size == 0:
            continue
        if ds.size * cfg.w_backhaul_min_hz > cfg.w_backhaul_hz * (1 + 1e-12):
            raise InfeasibleError(f"gBS {g}: backhaul minima of {ds.size} drones exceed W_B")
        parts = [eff_a[a, drone_users[a]] for a in ds]
        dptr = np.zeros(ds.size + 1, dtype=np.int64)
        dptr[1:] = np.cumsum([p.size for p in parts])
        ed = np.concatenate(parts) if parts else np.zeros(0)
        wg, Tg, wd, Td, wB, TB = solve_packed(eff_g[g, gu], ed, dptr, eff_b[g, ds], cfg,
                                              float(topo.gbs_tau[g]), alpha)
        solved += 1
        user_bw[gu] = wg
        user_tput[gu] = Tg
        drone_bw[ds] = wB
        drone_tput[ds] = TB
        for k, a in enumerate(ds):
            user_bw[drone_users[a]] = wd[dptr[k]:dptr[k + 1]]
            user_tput[drone_users[a]] = Td[dptr[k]:dptr[k + 1]]

    state = network_state(topo, alpha, ub, bh.drone_gbs, user_bw, user_tput, drone_bw, drone_tput)
    return Evaluation(state, budget, assoc, bh, drone_users, solved)


def network_state(topo, alpha, user_bs, drone_gbs, user_bw, user_tput, drone_bw, drone_tput):
    """Assemble a NetworkState; metrics cover served users only."""
    t = user_tput[user_bs >= 0]
    if t.size:
        util = alpha_fair_utility(t, alpha)
        jain = jain_index(t) if t.any() else math.nan
        tmin = float(t.min())
    else:
        util, jain, tmin = 0.0, math.nan, 0.0
    return NetworkState(topo, alpha, user_bs, drone_gbs, user_bw, user_tput, drone_bw, drone_tput,
                        util, tmin, float(t.sum()), jain, is_degenerate(t, alpha))


def drone_fitness(ev: Evaluation, cfg: SystemConfig, snr_budget: Optional[LinkBudget] = None):
    """Per-drone utility and its two counterfactuals.

    Unlimited backhaul: the drone's basket re-solved with no cap on its total.
    No interference: the basket re-solved on SNR efficiencies, still capped by
    the drone's current backhaul rate.
    """
    st = ev.state
    alpha = st.alpha
    b = snr_budget or ev.budget
    out = []
    for a, users in enumerate(ev.drone_users):
        if users.size == 0:
            out.append(DroneFitness(0.0, 0.0, 0.0, n_users=0))
            continue
        u = alpha_fair_utility(st.user_tput[users], alpha)
        e_sinr = np.log2(1.0 + ev.budget.air_access_sinr[a, users])
        e_snr = np.log2(1.0 + b.air_access_snr[a, users])
        binf = allocate_no_drones(e_sinr, cfg.w_air_hz, cfg.w_air_min_hz, math.inf, alpha).utility
        snr = allocate_no_drones(e_snr, cfg.w_air_hz, cfg.w_air_min_hz, st.drone_tput[a], alpha).utility
        out.append(DroneFitness(u, binf, snr, n_users=int(users.size)))
    return out


# ------------------------------------------------------------------ trace

def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class PaddTrace:
    iterations: list = field(default_factory=list)
    initial_utility: float = math.nan
    final_utility: float = math.nan
    wall_time_s: float = 0.0
    reason: str = ""
    evaluations: int = 0
    probes: int = 0
    allocations: int = 0
    fitness_solves: int = 0
    positions: list = field(default_factory=list)     # fleet after each accepted move
    evaluation: Optional[Evaluation] = field(default=None, repr=False)

    @property
    def accepted(self) -> list:
        return [r for r in self.iterations if r["accepted"] is not None]

    @property
    def n_moves(self) -> int:
        return len(self.accepted)

    def utility_sequence(self) -> list:
        return [self.initial_utility] + [r["utility_after"] for r in self.accepted]

    def records(self) -> list:
        keys = ("iteration", "least_fit", "probes", "accepted", "utility_before",
                "utility_after", "gain")
        return [{k: (_num(r[k]) if isinstance(r[k], float) else r[k]) for k in keys}
                for r in self.iterations]

    def to_jsonl(self, path=None) -> str:
        text = "".join(json.dumps(r) + "\n" for r in self.records())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        return {"initial_utility": _num(self.initial_utility), "final_utility": _num(self.final_utility),
                "iterations": len(self.iterations), "moves": self.n_moves, "reason": self.reason,
                "wall_time_s": self.wall_time_s, "evaluations": self.evaluations,
                "probes": self.probes, "allocations": self.allocations,
                "fitness_solves": self.fitness_solves}


# --------------------------------------------------------------- optimize

def optimize(topology: Topology, cfg: SystemConfig, rng, max_iter: int = 100, alpha: float = 1.0,
             shadows: Optional[ShadowingTable] = None, initial=None, workers: int = 1,
             batch: int = 8, n_drones: Optional[int] = None):
    """Place the fleet; returns (NetworkState, PaddTrace).

    `initial` warm-starts from given positions, otherwise initial_placement is
    used with `n_drones` (default: the fleet size of `topology`). Probes are
    drawn in batches of `batch`; with workers > 1 a batch is evaluated on a
    thread pool, and the first improving probe in draw order is taken, so the
    result does not depend on `workers`.
    """
    t0 = time.perf_counter()
    gen = as_generator(rng.child("probe") if isinstance(rng, RngStream) else rng)
    if shadows is None:
        src = rng.child("shadowing") if isinstance(rng, RngStream) else gen
        A = topology.n_drones if n_drones is None else n_drones
        shadows = draw_shadowing(topology.n_gbs, topology.n_users, A, cfg, src)
    lat = Lattice(topology.area, cfg)
    if initial is None:
        pos = initial_placement(topology, cfg, None, n_drones, lat)
    else:
        pos = np.array(initial, dtype=float).reshape(-1, 3)
    A = len(pos)
    gterms = ground_link_terms(topology.with_drones(pos), cfg, shadows)

    def run(p):
        return evaluate(p, topology, cfg, shadows, alpha, gterms)

    cur = run(pos)
    trace = PaddTrace(initial_utility=cur.utility, evaluations=1, allocations=cur.allocations)
    trace.positions.append(pos.copy())
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        _loop(cur, pos, run, lat, cfg, gen, max_iter, batch, pool, trace)
    finally:
        if pool is not None:
            pool.shutdown()
    trace.wall_time_s = time.perf_counter() - t0
    return trace.evaluation.state, trace


def _loop(cur, pos, run, lat, cfg, gen, max_iter, batch, pool, trace):
    A = len(pos)
    alpha = cur.state.alpha
    N = cfg.probe_lattice_n
    visited = [set() for _ in range(A)]
    stuck = set()
    it = 0
    trace.reason = "no drones" if A == 0 else "max_iter"
    while A and it < max_iter:
        fit = drone_fitness(cur, cfg)
        trace.fitness_solves += 2 * sum(f.n_users > 0 for f in fit)
        a0 = least_fit_drone(fit, exclude=stuck)
        if a0 < 0:
            trace.reason = "exhausted"
            break
        it += 1
        occupied = {lat.index_of(p) for b, p in enumerate(pos) if b != a0}
        u0 = cur.score
        found = None
        probes = 0
        while found is None and probes < N:
            cands = []
            for _ in range(min(batch, N - probes)):
                p = probe(pos[a0], visited[a0] | occupied, cfg, gen, lat)
                if p is None:
                    break
                visited[a0].add(lat.index_of(p))
                cands.append(p)
            if not cands:
                break
            fleets = []
            for p in cands:
                f = pos.copy()
                f[a0] = p
                fleets.append(f)
            evs = list(pool.map(run, fleets)) if pool is not None else None
            for k, f in enumerate(fleets):
                ev = evs[k] if evs is not None else run(f)
                probes += 1
                trace.evaluations += 1
                trace.allocations += ev.allocations
                gain = score_gain(ev.score, u0, alpha)
                if gain > cfg.delta:
                    found = (f, ev, gain)
                    break
        trace.probes += probes
        rec = {"iteration": it, "least_fit": int(a0), "probes": probes, "accepted": None,
               "utility_before": float(cur.utility), "utility_after": float(cur.utility), "gain": 0.0}
        trace.iterations.append(rec)
        if found is None:
            stuck.add(a0)
            continue
        f, ev, gain = found
        pos[:] = f
        cur = ev
        rec.update(accepted=[float(v) for v in f[a0]], utility_after=float(ev.utility), gain=float(gain))
        trace.positions.append(pos.copy())
        # every neighbourhood changed with the move
        stuck.clear()
        for v in visited:
            v.clear()
        if not gain > cfg.epsilon:
            trace.reason = "epsilon"
            break
    trace.evaluation = cur
    trace.final_utility = cur.utility
