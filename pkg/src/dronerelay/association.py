"""User cell selection and gBS-drone backhaul assignment."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import SystemConfig

# weight of a drone that serves nobody under log-type utilities; finite so sums stay ordered
SENTINEL = -1e30


class InfeasibleError(ValueError):
    """Not enough backhaul slots for the fleet."""


@dataclass
class AssociationResult:
    user_bs: np.ndarray       # stacked BS index (gBSs then drones), -1 if rejected
    rejected: np.ndarray
    per_bs_load: np.ndarray

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.size)


@dataclass
class BackhaulAssignment:
    drone_gbs: np.ndarray
    per_gbs_count: np.ndarray
    objective: float = 0.0


def bs_capacities(n_gbs: int, n_drones: int, cfg: SystemConfig) -> np.ndarray:
    """Users each BS can take: U_max, further limited by how many minimum shares fit in the band."""
    g_cap = min(cfg.u_max, int(math.floor(cfg.w_ground_hz / cfg.w_ground_min_hz * (1 + 1e-12))))
    a_cap = min(cfg.u_max, int(math.floor(cfg.w_air_hz / cfg.w_air_min_hz * (1 + 1e-12))))
    return np.array([g_cap] * n_gbs + [a_cap] * n_drones, dtype=np.int64)


def associate_users(snr, cfg: SystemConfig = None, capacity=None, n_gbs=None) -> AssociationResult:
    """Best-SNR attachment with fallback down each user's ranked list when a BS is full.

    `snr` is the stacked (BS, user) matrix (gBS rows first) or a LinkBudget.
    Users are served in decreasing order of their best SNR, ties by id.
    `capacity` overrides the per-BS limits derived from cfg.
    """
    if hasattr(snr, "access_snr"):
        n_gbs = snr.ground_access_snr.shape[0]
        snr = snr.access_snr
    snr = np.asarray(snr, dtype=float)
    B, U = snr.shape
    if capacity is None:
        if cfg is None:
            raise ValueError("need cfg or capacity")
        ng = B if n_gbs is None else n_gbs
        capacity = bs_capacities(ng, B - ng, cfg)
    cap = np.broadcast_to(np.asarray(capacity, dtype=np.int64), (B,)).copy()
    user_bs = np.full(U, -1, dtype=np.int64)
    load = np.zeros(B, dtype=np.int64)
    if U == 0 or B == 0:
        return AssociationResult(user_bs, np.arange(U), load)
    first = np.argmax(snr, axis=0)
    load = np.bincount(first, minlength=B)
    if (load <= cap).all():
        # nobody is turned away from a first choice
        return AssociationResult(first.astype(np.int64), np.zeros(0, dtype=np.int64), load)
    load[:] = 0
    best = snr.max(axis=0)
    order = np.lexsort((np.arange(U), -best))
    for u in order:
        # stable sort keeps lower BS index first among equal SNRs
        for b in np.argsort(-snr[:, u], kind="mergesort"):
            if load[b] < cap[b]:
                user_bs[u] = b
                load[b] += 1
                break
    return AssociationResult(user_bs, np.flatnonzero(user_bs < 0), load)


def backhaul_weight(n_a, n_union, gamma_b, alpha: float) -> float:
    """Utility coefficient of the pair (g, a) in the backhaul assignment objective.

    The rate proxy is the drone's user share of the gBS times the backhaul
    spectral efficiency. Max-min (alpha=inf) has no additive form, so it uses
    the logarithmic weight.
    """
    if n_union < n_a or n_a < 0 or gamma_b < 0:
        raise ValueError("need n_union >= n_a >= 0 and gamma_b >= 0")
    x = (n_a / n_union if n_union > 0 else 0.0) * math.log2(1.0 + gamma_b)
    if alpha == 0:
        return x
    if alpha == 1 or math.isinf(alpha):
        return math.log(x) if x > 0 else SENTINEL
    if x == 0:
        return 0.0 if alpha < 1 else SENTINEL
    return x ** (1.0 - alpha) / (1.0 - alpha)


def weight_matrix(backhaul_snr, gbs_users, drone_users, alpha: float) -> np.ndarray:
    """(G, A) weights from per-gBS and per-drone user counts."""
    gam = np.asarray(backhaul_snr, dtype=float)
    G, A = gam.shape
    out = np.empty((G, A))
    for g in range(G):
        for a in range(A):
            na = int(drone_users[a])
            out[g, a] = backhaul_weight(na, int(gbs_users[g]) + na, gam[g, a], alpha)
    return out


def _knapsack_unit(values, capacity: int) -> np.ndarray:
    """0-1 knapsack with unit item sizes by dynamic programming; returns chosen indices.

    Items with non-positive value are never worth a slot. Ties keep the lower index.
    """
    n = len(values)
    C = min(capacity, n)
    dp = np.full((n + 1, C + 1), -np.inf)
    dp[0, 0] = 0.0
    take = np.zeros((n + 1, C + 1), dtype=bool)
    for i in range(1, n + 1):
        v = values[i - 1]
        for c in range(C + 1):
            dp[i, c] = dp[i - 1, c]
            if c and v > 0 and dp[i - 1, c - 1] + v > dp[i, c]:
                dp[i, c] = dp[i - 1, c - 1] + v
                take[i, c] = True
    c = int(np.argmax(dp[n]))
    chosen = []
    for i in range(n, 0, -1):
        if take[i, c]:
            chosen.append(i - 1)
            c -= 1
    return np.array(sorted(chosen), dtype=np.int64)


def assignment_objective(weights, drone_gbs) -> float:
    W = np.asarray(weights, dtype=float)
    return float(W[np.asarray(drone_gbs), np.arange(W.shape[1])].sum()) if W.shape[1] else 0.0


def gap_knap(weights, a_g_max: int, improve: bool = True) -> BackhaulAssignment:
    """Heuristic for the capacitated drone-to-gBS assignment.

    1. Sweep gBSs in id order; each solves a unit-size knapsack over the still
       unassigned drones, valuing a drone by its advantage over its best later gBS.
    2. Leftover drones go, in id order, to the gBS with spare slots and highest weight.
    3. Improving chains of drone moves are applied while any exists.
    """
    W = np.asarray(weights, dtype=float)
    G, A = W.shape
    if A == 0:
        return BackhaulAssignment(np.zeros(0, dtype=np.int64), np.zeros(G, dtype=np.int64), 0.0)
    if G * a_g_max < A:
        raise InfeasibleError(f"{A} drones but only {G} x {a_g_max} backhaul slots")
    assign = np.full(A, -1, dtype=np.int64)
    count = np.zeros(G, dtype=np.int64)
    for g in range(G):
        free = np.flatnonzero(assign < 0)
        if free.size == 0:
            break
        if g + 1 < G:
            value = W[g, free] - W[g + 1:, free].max(axis=0)
        else:
            value = np.full(free.size, np.inf)
        value = np.where(np.isinf(value), 1e300, value)
        for k in _knapsack_unit(value, a_g_max):
            assign[free[k]] = g
            count[g] += 1
    for a in np.flatnonzero(assign < 0):
        open_ = np.flatnonzero(count < a_g_max)
        g = open_[np.argmax(W[open_, a])]
        assign[a] = g
        count[g] += 1
    if improve:
        _local_search(W, assign, count, a_g_max)
    return BackhaulAssignment(assign, count, assignment_objective(W, assign))


def _local_search(W, assign, count, cap, max_rounds: int = 10000) -> None:
    """Apply improving move chains until none is left.

    A chain moves drone a1 from g1 to g2, a2 from g2 to g3, and so on, and
    either closes into a cycle or ends at a gBS with a spare slot. On the
    gBS graph, edge g -> h carries the best gain of moving one drone from g
    to h; a positive cycle or source-to-sink path is found by Bellman-Ford.
    With unit-size items no improving chain means the assignment is optimal.
    """
    G, A = W.shape
    S, T = G, G + 1
    real = W[np.isfinite(W) & (W > 0.5 * SENTINEL)]
    tol = 1e-12 * (1.0 + float(np.abs(real).max(initial=0.0)))
    for _ in range(max_rounds):
        edges = []
        for g in range(G):
            members = np.flatnonzero(assign == g)
            if members.size == 0:
                continue
            edges.append((S, g, 0.0, -1))
            for h in range(G):
                if h != g:
                    gains = W[h, members] - W[g, members]
                    k = int(np.argmax(gains))
                    edges.append((g, h, float(gains[k]), int(members[k])))
        for h in range(G):
            if count[h] < cap:
                edges.append((h, T, 0.0, -1))
        chain = _improving_chain(edges, G + 2, S, T, tol)
        if chain is None:
            return
        for g, h, a in chain:
            assign[a] = h
            count[g] -= 1
            count[h] += 1


def _improving_chain(edges, V, S, T, tol):
    """Longest-path Bellman-Ford from S; returns moves of a positive cycle or S-T path."""
    dist = np.full(V, -np.inf)
    dist[S] = 0.0
    pred = [None] * V
    last = -1
    for _ in range(V):
        last = -1
        for u, v, w, a in edges:
            if dist[u] > -np.inf and dist[u] + w > dist[v] + tol:
                dist[v] = dist[u] + w
                pred[v] = (u, v, a)
                last = v
        if last < 0:
            break
    if last >= 0:
        # still relaxing after V rounds: walk back V steps to land inside the cycle
        v = last
        for _ in range(V):
            v = pred[v][0]
        cycle, u = [], v
        while True:
            e = pred[u]
            cycle.append((e[0], e[1], e[2]))
            u = e[0]
            if u == v:
                break
        return cycle[::-1]
    if dist[T] > tol:
        path, u = [], T
        while u != S:
            e = pred[u]
            if e[2] >= 0:
                path.append((e[0], e[1], e[2]))
            u = e[0]
        return path[::-1]
    return None


def gap_brute_force(weights, a_g_max: int) -> BackhaulAssignment:
    """Exhaustive optimum; only for tiny instances (G^A assignments)."""
    W = np.asarray(weights, dtype=float)
    G, A = W.shape
    if G * a_g_max < A:
        raise InfeasibleError(f"{A} drones but only {G} x {a_g_max} backhaul slots")
    best, best_val = None, -math.inf
    for combo in itertools.product(range(G), repeat=A):
        c = np.bincount(np.array(combo, dtype=np.int64), minlength=G)
        if (c > a_g_max).any():
            continue
        v = float(W[list(combo), range(A)].sum()) if A else 0.0
        if v > best_val:
            best, best_val = combo, v
    assign = np.array(best, dtype=np.int64)
    return BackhaulAssignment(assign, np.bincount(assign, minlength=G), best_val if A else 0.0)
