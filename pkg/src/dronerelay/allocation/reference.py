"""Literal transcription of the published allocation procedures.

Kept for comparison with the exact solver, not used by the pipeline. The
generic-case loop raises drone-user rates with the access bandwidths frozen
at their first solve, and the set-J rule pins the highest-efficiency user
first, so on some instances these procedures stop short of the optimum.
`compare_with_exact` measures the gap.
"""
from __future__ import annotations

import math

import numpy as np

from ..metrics import alpha_fair_utility, is_degenerate
from .solver import AllocationInstance, AllocationSolution, allocate_generic

_SCALE = 1e6


def set_j_shares(e, W, wmin, alpha):
    """Unbounded-tau shares; users below the minimum are pinned highest efficiency first."""
    e = np.asarray(e, dtype=float)
    n = e.size
    if n == 0:
        return np.zeros(0)
    p = (1.0 - alpha) / alpha
    J = np.zeros(n, dtype=bool)
    while True:
        w = np.full(n, wmin)
        free = ~J & (e > 0)
        if not free.any():
            w[0] += W - w.sum()
            return w
        weights = e[free] ** p
        w[free] = (W - (n - free.sum()) * wmin) * weights / weights.sum()
        low = free & (w < wmin)
        if not low.any():
            return w
        cand = np.flatnonzero(~J & (e > 0))
        J[cand[np.argmax(e[cand])]] = True


def level_down_steps(x, X):
    """Lower the current maxima toward the runner-up until sum(x) <= X."""
    x = np.array(x, dtype=float)
    for _ in range(x.size + 1):
        R = x.sum() - X
        if R <= 0:
            break
        top = x.max()
        M = x == top
        rest = x[~M]
        second = rest.max() if rest.size else 0.0
        step = R / M.sum()
        # land exactly on the runner-up so it joins the tie set
        x[M] = second if step >= top - second else top - step
    return x


def best_user_fill(e, W, wmin, tau):
    """Best user saturated, then users by decreasing efficiency while tau allows."""
    e = np.asarray(e, dtype=float)
    n = e.size
    w = np.full(n, wmin)
    T = np.zeros(n)
    if n == 0:
        return w, T
    order = np.argsort(-e, kind="mergesort")
    w[order[0]] = W - (n - 1) * wmin
    left = tau
    for i in order:
        T[i] = min(left, w[i] * e[i])
        left -= T[i]
    return w, T


def water_fill(e, W, wmin):
    """Max-min shares: every user reaches a common rate unless pinned at the minimum."""
    e = np.asarray(e, dtype=float)
    n = e.size
    if n == 0:
        return np.zeros(0), np.zeros(0)
    pinned = np.zeros(n, dtype=bool)
    while True:
        live = ~pinned
        level = (W - pinned.sum() * wmin) / (1.0 / e[live]).sum()
        w = np.where(live, level / e, wmin)
        low = live & (w < wmin)
        if not low.any():
            return w, w * e
        pinned |= low


def basket(e, W, wmin, alpha, cap=math.inf):
    """One basket solved alone, then its rates cut down to `cap`."""
    e = np.asarray(e, dtype=float)
    if e.size == 0:
        return np.zeros(0), np.zeros(0)
    if alpha == 0:
        return best_user_fill(e, W, wmin, cap)
    if math.isinf(alpha):
        w, T = water_fill(e, W, wmin)
        if T.sum() > cap:
            T = np.minimum(T, T.min())
            if T.sum() > cap:
                T = T - (T.sum() - cap) / T.size
        return w, T
    w = set_j_shares(e, W, wmin, alpha)
    return w, level_down_steps(w * e, cap)


def transcribed_generic(inst: AllocationInstance) -> AllocationSolution:
    """Generic-case procedure as published, in MHz/Mbps internally."""
    s = _SCALE
    alpha = inst.alpha
    WG, WA, WB = inst.w_ground / s, inst.w_air / s, inst.w_backhaul / s
    wgm, wam, wbm = inst.w_ground_min / s, inst.w_air_min / s, inst.w_backhaul_min / s
    b = np.array([d.backhaul_eff for d in inst.drones])
    nd = b.size
    wg, Tg = basket(inst.gbs_user_eff, WG, wgm, alpha)

    # first try: every drone basket on its own, backhaul sized to demand
    wd, Td = [], []
    for d in inst.drones:
        w, T = basket(d.user_eff, WA, wam, alpha)
        wd.append(w)
        Td.append(T)
    wB = np.array([max(wbm, Td[a].sum() / b[a]) if b[a] > 0 else wbm for a in range(nd)])
    if nd and wB.sum() > WB:
        wB = np.full(nd, wbm)
        TB = wB * b
        wd, Td = [], []
        for a, d in enumerate(inst.drones):
            w, T = basket(d.user_eff, WA, wam, alpha, TB[a])
            wd.append(w)
            Td.append(T)
        caps = [wd[a] * inst.drones[a].user_eff for a in range(nd)]
        for _ in range(10 * sum(t.size for t in Td) + 10):
            below = [(a, i) for a in range(nd) for i in range(Td[a].size)
                     if Td[a][i] < caps[a][i] and b[a] > 0]
            if not below:
                break
            Tm = min(Td[a][i] for a, i in below)
            Lm = [(a, i) for a in range(nd) for i in range(Td[a].size) if Td[a][i] == Tm]
            above = [Td[a][i] for a in range(nd) for i in range(Td[a].size) if Td[a][i] > Tm]
            TM = min(above) if above else math.inf
            TM2 = min(TM, min(caps[a][i] for a, i in Lm))
            if not TM2 > Tm:
                break
            counts = np.zeros(nd)
            for a, _i in Lm:
                counts[a] += 1
            denom = (TM2 - Tm) * (counts / np.where(b > 0, b, np.inf)).sum()
            beta = min(1.0, (WB - wB.sum()) / denom) if denom > 0 else 1.0
            wB = wB + counts * beta * (TM2 - Tm) / np.where(b > 0, b, np.inf)
            for a, i in Lm:
                Td[a][i] += beta * (TM2 - Tm)
            if beta < 1.0:
                break
    if nd:
        wB[0] += WB - wB.sum()

    # backbone
    allT = np.concatenate([Tg] + Td) if (Tg.size or Td) else np.zeros(0)
    if math.isfinite(inst.tau) and allT.sum() > inst.tau / s:
        if alpha == 0:
            allT = _greedy_cut(np.concatenate([inst.gbs_user_eff] + [d.user_eff for d in inst.drones]),
                               allT, inst.tau / s)
        elif math.isinf(alpha):
            allT = np.minimum(allT, allT.min())
            if allT.sum() > inst.tau / s:
                allT = allT - (allT.sum() - inst.tau / s) / allT.size
        else:
            allT = level_down_steps(allT, inst.tau / s)
    Tg = allT[:Tg.size]
    pos = Tg.size
    for a in range(nd):
        Td[a] = allT[pos:pos + Td[a].size]
        pos += Td[a].size
    TB = np.array([t.sum() for t in Td])
    out = np.concatenate([Tg] + Td) * s
    return AllocationSolution(wg * s, Tg * s, wB * s, TB * s, [w * s for w in wd],
                              [t * s for t in Td], alpha_fair_utility(out, alpha) if out.size else 0.0,
                              alpha, is_degenerate(out, alpha))


def _greedy_cut(e, T, X):
    """Keep rates in decreasing efficiency order until the budget X is used."""
    out = np.zeros_like(T)
    left = X
    for i in np.argsort(-e, kind="mergesort"):
        out[i] = min(left, T[i])
        left -= out[i]
    return out


def compare_with_exact(inst: AllocationInstance) -> dict:
    """Utility of both procedures and the relative shortfall of the published one."""
    ref = transcribed_generic(inst)
    ex = allocate_generic(inst)
    gap = (ex.utility - ref.utility) / max(abs(ex.utility), 1e-12)
    return {"exact": ex.utility, "reference": ref.utility, "relative_gap": gap}
