"""Per-gBS bandwidth allocation: the public solver API.

One gBS owns three kinds of baskets: its own users share W_G, each relay
drone's users share W_A, and the drones share the backhaul pool W_B. Every
user's rate is capped by bandwidth times spectral efficiency, a drone's users
together by its backhaul rate, and everything by the backbone capacity tau.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..metrics import alpha_fair_utility, is_degenerate
from . import _kernels as K

# internal units: MHz and Mbps
_SCALE = 1e6


class InfeasibleError(ValueError):
    """Minimum allocations exceed a budget."""


@dataclass
class DroneBasket:
    backhaul_eff: float
    user_eff: np.ndarray

    def __post_init__(self):
        self.backhaul_eff = float(self.backhaul_eff)
        self.user_eff = np.asarray(self.user_eff, dtype=float).ravel()


@dataclass
class AllocationInstance:
    """Inputs of one gBS program. Efficiencies in bps/Hz, budgets in Hz, tau in bps."""

    gbs_user_eff: np.ndarray
    drones: list = field(default_factory=list)
    w_ground: float = 18e6
    w_ground_min: float = 180e3
    w_air: float = 18e6
    w_air_min: float = 180e3
    w_backhaul: float = 18e6
    w_backhaul_min: float = 1e6
    tau: float = math.inf
    alpha: float = 1.0

    def __post_init__(self):
        self.gbs_user_eff = np.asarray(self.gbs_user_eff, dtype=float).ravel()
        self.drones = [d if isinstance(d, DroneBasket) else DroneBasket(*d) for d in self.drones]

    @classmethod
    def from_config(cls, cfg, gbs_user_eff, drones=(), tau=None, alpha=1.0):
        return cls(gbs_user_eff, list(drones), cfg.w_ground_hz, cfg.w_ground_min_hz, cfg.w_air_hz,
                   cfg.w_air_min_hz, cfg.w_backhaul_hz, cfg.w_backhaul_min_hz,
                   cfg.tau_g_bps if tau is None else tau, alpha)

    @property
    def n_users(self) -> int:
        return self.gbs_user_eff.size + sum(d.user_eff.size for d in self.drones)

    def validate(self) -> None:
        effs = [self.gbs_user_eff] + [d.user_eff for d in self.drones]
        if any((e < 0).any() or not np.isfinite(e).all() for e in effs):
            raise ValueError("efficiencies must be finite and >= 0")
        if any(d.backhaul_eff < 0 or not math.isfinite(d.backhaul_eff) for d in self.drones):
            raise ValueError("backhaul efficiencies must be finite and >= 0")
        if self.alpha < 0 or math.isnan(self.alpha):
            raise ValueError("alpha must be >= 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.gbs_user_eff.size * self.w_ground_min > self.w_ground * (1 + 1e-12):
            raise InfeasibleError("ground minima exceed W_G")
        for d in self.drones:
            if d.user_eff.size * self.w_air_min > self.w_air * (1 + 1e-12):
                raise InfeasibleError("drone minima exceed W_A")
        if len(self.drones) * self.w_backhaul_min > self.w_backhaul * (1 + 1e-12):
            raise InfeasibleError("backhaul minima exceed W_B")


@dataclass
class AllocationSolution:
    """Bandwidth (Hz) and throughput (bps) per user and per backhaul link."""

    gbs_user_bw: np.ndarray
    gbs_user_tput: np.ndarray
    drone_bw: np.ndarray
    drone_tput: np.ndarray
    drone_user_bw: list
    drone_user_tput: list
    utility: float
    alpha: float
    degenerate: bool = False

    def all_tputs(self) -> np.ndarray:
        return np.concatenate([self.gbs_user_tput] + list(self.drone_user_tput))

    def all_bws(self) -> np.ndarray:
        return np.concatenate([self.gbs_user_bw] + list(self.drone_user_bw))


def _pack(inst: AllocationInstance):
    eg = inst.gbs_user_eff.copy()
    sizes = [d.user_eff.size for d in inst.drones]
    dptr = np.zeros(len(sizes) + 1, dtype=np.int64)
    dptr[1:] = np.cumsum(sizes)
    ed = np.concatenate([d.user_eff for d in inst.drones]) if inst.drones else np.zeros(0)
    b = np.array([d.backhaul_eff for d in inst.drones], dtype=float)
    return eg, ed.astype(float), dptr, b


def _solve(inst: AllocationInstance) -> AllocationSolution:
    inst.validate()
    eg, ed, dptr, b = _pack(inst)
    s = _SCALE
    wg, Tg = np.zeros(eg.size), np.zeros(eg.size)
    wd, Td = np.zeros(ed.size), np.zeros(ed.size)
    wB, TB = np.zeros(b.size), np.zeros(b.size)
    alpha = float(inst.alpha)
    K.solve_gbs(eg, ed, dptr, b, inst.w_ground / s, inst.w_ground_min / s, inst.w_air / s,
                inst.w_air_min / s, inst.w_backhaul / s, inst.w_backhaul_min / s, inst.tau / s,
                alpha, wg, Tg, wd, Td, wB, TB)
    return _solution(wg * s, Tg * s, wB * s, TB * s, wd * s, Td * s, dptr, alpha)


def _solution(wg, Tg, wB, TB, wd, Td, dptr, alpha) -> AllocationSolution:
    dw = [wd[dptr[a]:dptr[a + 1]] for a in range(len(dptr) - 1)]
    dt = [Td[dptr[a]:dptr[a + 1]] for a in range(len(dptr) - 1)]
    allT = np.concatenate([Tg, Td])
    util = alpha_fair_utility(allT, alpha) if allT.size else 0.0
    return AllocationSolution(wg, Tg, wB, TB, dw, dt, util, alpha, is_degenerate(allT, alpha))


def solve_packed(eg, ed, dptr, b, cfg, tau: float, alpha: float):
    """Allocation for pre-packed arrays, skipping validation and the utility.

    `ed` holds all drone users back to back with drone d at ed[dptr[d]:dptr[d+1]].
    Returns (wg, Tg, wd, Td, wB, TB) in Hz and bps. Callers guarantee that the
    minimum shares fit their budgets.
    """
    s = _SCALE
    wg, Tg = np.zeros(eg.size), np.zeros(eg.size)
    wd, Td = np.zeros(ed.size), np.zeros(ed.size)
    wB, TB = np.zeros(b.size), np.zeros(b.size)
    K.solve_gbs(eg, ed, dptr, b, cfg.w_ground_hz / s, cfg.w_ground_min_hz / s, cfg.w_air_hz / s,
                cfg.w_air_min_hz / s, cfg.w_backhaul_hz / s, cfg.w_backhaul_min_hz / s, tau / s,
                float(alpha), wg, Tg, wd, Td, wB, TB)
    return wg * s, Tg * s, wd * s, Td * s, wB * s, TB * s


def allocate_no_drones(effs, W, W_min, tau=math.inf, alpha=1.0) -> AllocationSolution:
    """Optimal split of one basket W among users with efficiencies `effs`."""
    inst = AllocationInstance(effs, [], w_ground=W, w_ground_min=W_min, tau=tau, alpha=alpha)
    return _solve(inst)


def allocate_single_drone(inst: AllocationInstance) -> AllocationSolution:
    if len(inst.drones) != 1:
        raise ValueError("allocate_single_drone needs exactly one drone")
    return _solve(inst)


def allocate_generic(inst: AllocationInstance) -> AllocationSolution:
    """Optimal allocation for any number of drones (zero and one included)."""
    return _solve(inst)


def reduce_to_budget(throughputs: Sequence[float], X: float, alpha: float = 1.0) -> np.ndarray:
    """Lower the largest rates to a common level until their sum is at most X.

    This is the optimal cut of any symmetric concave utility under per-user
    caps and a sum budget. `alpha` is accepted for signature symmetry; the
    result does not depend on it.
    """
    if X < 0:
        raise ValueError("budget X must be >= 0")
    x = np.array(throughputs, dtype=float)
    K.level_down(x, float(X))
    return x


def residuals(inst: AllocationInstance, sol: AllocationSolution) -> dict:
    """Worst relative violation per constraint family of the per-gBS program.

    Bandwidth sums are equalities here; all other blocks are inequalities.
    """
    def excess(lhs, rhs):
        lhs, rhs = np.broadcast_arrays(np.atleast_1d(np.asarray(lhs, dtype=float)),
                                       np.asarray(rhs, dtype=float))
        if lhs.size == 0:
            return 0.0
        return max(0.0, float(((lhs - rhs) / np.maximum(np.abs(rhs), 1.0)).max()))

    def gap(total, W):
        return abs(total - W) / W

    r = {}
    eg = inst.gbs_user_eff
    r["ground_sum"] = gap(sol.gbs_user_bw.sum(), inst.w_ground) if eg.size else 0.0
    r["ground_min"] = excess(inst.w_ground_min, sol.gbs_user_bw) if eg.size else 0.0
    r["ground_shannon"] = excess(sol.gbs_user_tput, sol.gbs_user_bw * eg)
    r["nonneg"] = excess(-sol.all_tputs(), 0.0)
    air_sum = air_min = air_sh = agg = 0.0
    for a, d in enumerate(inst.drones):
        if d.user_eff.size:
            air_sum = max(air_sum, gap(sol.drone_user_bw[a].sum(), inst.w_air))
            air_min = max(air_min, excess(inst.w_air_min, sol.drone_user_bw[a]))
            air_sh = max(air_sh, excess(sol.drone_user_tput[a], sol.drone_user_bw[a] * d.user_eff))
        agg = max(agg, excess(sol.drone_user_tput[a].sum(), sol.drone_tput[a]))
    r.update(air_sum=air_sum, air_min=air_min, air_shannon=air_sh, drone_aggregate=agg)
    if inst.drones:
        b = np.array([d.backhaul_eff for d in inst.drones])
        r["backhaul_sum"] = gap(sol.drone_bw.sum(), inst.w_backhaul)
        r["backhaul_min"] = excess(inst.w_backhaul_min, sol.drone_bw)
        r["backhaul_shannon"] = excess(sol.drone_tput, sol.drone_bw * b)
    total = sol.gbs_user_tput.sum() + sol.drone_tput.sum()
    r["backbone"] = excess(total, inst.tau) if math.isfinite(inst.tau) else 0.0
    return r
