"""Independent numeric solver for the per-gBS allocation program.

Used only to validate the exact solver. It shares no code with it: the
program is written out as explicit variables and linear constraints and
handed to generic routines.

* 0 < alpha < inf: SLSQP on the smooth concave objective.
* alpha = 0: the program is a linear program (HiGHS).
* alpha = inf: bisection on the common rate level with a direct feasibility test.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import linprog, minimize

from ..metrics import alpha_fair_utility, is_degenerate
from .solver import AllocationInstance, AllocationSolution

_SCALE = 1e6


class OracleError(RuntimeError):
    """The numeric solve did not converge."""


def _layout(inst: AllocationInstance):
    """Variable layout: [w_g, T_g, (w_a, T_a) per drone, w^a per drone]."""
    ng = inst.gbs_user_eff.size
    blocks = []
    pos = 2 * ng
    for d in inst.drones:
        n = d.user_eff.size
        blocks.append((pos, pos + n, pos + n, pos + 2 * n))
        pos += 2 * n
    wb0 = pos
    pos += len(inst.drones)
    return ng, blocks, wb0, pos


def _constraints(inst: AllocationInstance):
    s = _SCALE
    ng, blocks, wb0, nvar = _layout(inst)
    eg = inst.gbs_user_eff
    aeq, beq, aub, bub = [], [], [], []
    lb = np.zeros(nvar)
    ub = np.full(nvar, np.inf)
    t_idx = []

    if ng:
        row = np.zeros(nvar)
        row[:ng] = 1.0
        aeq.append(row)
        beq.append(inst.w_ground / s)
        lb[:ng] = inst.w_ground_min / s
        for i in range(ng):
            row = np.zeros(nvar)
            row[ng + i] = 1.0
            row[i] = -eg[i]
            aub.append(row)
            bub.append(0.0)
        t_idx += list(range(ng, 2 * ng))
    for a, (w0, w1, t0, t1) in enumerate(blocks):
        e = inst.drones[a].user_eff
        if w1 > w0:
            row = np.zeros(nvar)
            row[w0:w1] = 1.0
            aeq.append(row)
            beq.append(inst.w_air / s)
        lb[w0:w1] = inst.w_air_min / s
        for i in range(w1 - w0):
            row = np.zeros(nvar)
            row[t0 + i] = 1.0
            row[w0 + i] = -e[i]
            aub.append(row)
            bub.append(0.0)
        # drone users' sum within the backhaul rate
        row = np.zeros(nvar)
        row[t0:t1] = 1.0
        row[wb0 + a] = -inst.drones[a].backhaul_eff
        aub.append(row)
        bub.append(0.0)
        t_idx += list(range(t0, t1))
    if inst.drones:
        row = np.zeros(nvar)
        row[wb0:] = 1.0
        aeq.append(row)
        beq.append(inst.w_backhaul / s)
        lb[wb0:] = inst.w_backhaul_min / s
    if math.isfinite(inst.tau):
        row = np.zeros(nvar)
        row[t_idx] = 1.0
        aub.append(row)
        bub.append(inst.tau / s)
    A_eq = np.array(aeq).reshape(-1, nvar)
    A_ub = np.array(aub).reshape(-1, nvar)
    return A_eq, np.array(beq), A_ub, np.array(bub), lb, ub, np.array(t_idx, dtype=int)


def _to_solution(inst: AllocationInstance, x: np.ndarray) -> AllocationSolution:
    s = _SCALE
    ng, blocks, wb0, nvar = _layout(inst)
    wg = x[:ng] * s
    tg = x[ng:2 * ng] * s
    dw = [x[w0:w1] * s for (w0, w1, t0, t1) in blocks]
    dt = [x[t0:t1] * s for (w0, w1, t0, t1) in blocks]
    wb = x[wb0:nvar] * s
    tb = np.array([t.sum() for t in dt])
    allt = np.concatenate([tg] + dt)
    util = alpha_fair_utility(np.maximum(allt, 0.0), inst.alpha) if allt.size else 0.0
    return AllocationSolution(wg, tg, wb, tb, dw, dt, util, inst.alpha,
                              is_degenerate(allt, inst.alpha))


def _start_point(inst, A_eq, lb, nvar, t_idx):
    """Equal splits, then rates at half their caps scaled into the budgets."""
    s = _SCALE
    ng, blocks, wb0, _ = _layout(inst)
    x = np.zeros(nvar)
    if ng:
        x[:ng] = inst.w_ground / s / ng
        x[ng:2 * ng] = 0.5 * x[:ng] * inst.gbs_user_eff
    if inst.drones:
        x[wb0:] = inst.w_backhaul / s / len(inst.drones)
    for a, (w0, w1, t0, t1) in enumerate(blocks):
        n = w1 - w0
        if n == 0:
            continue
        x[w0:w1] = inst.w_air / s / n
        x[t0:t1] = 0.5 * x[w0:w1] * inst.drones[a].user_eff
        room = 0.5 * x[wb0 + a] * inst.drones[a].backhaul_eff
        tot = x[t0:t1].sum()
        if tot > room:
            x[t0:t1] *= room / tot
    if math.isfinite(inst.tau):
        tot = x[t_idx].sum()
        if tot > 0.5 * inst.tau / s:
            x[t_idx] *= 0.5 * inst.tau / s / tot
    return x


def _slsqp(inst: AllocationInstance, ftol: float, maxiter: int, restarts: int = 20) -> AllocationSolution:
    A_eq, b_eq, A_ub, b_ub, lb, ub, t_idx = _constraints(inst)
    nvar = lb.size
    alpha = inst.alpha
    x0 = _start_point(inst, A_eq, lb, nvar, t_idx)
    # rates of zero-efficiency users are pinned at 0 and left out of the objective
    live = _rate_efficiencies(inst) > 0
    # keeps the gradient finite at T = 0
    lo_t = 1e-12
    for k, j in enumerate(t_idx):
        if live[k]:
            lb[j] = lo_t
            x0[j] = max(x0[j], 10 * lo_t)
        else:
            lb[j] = ub[j] = x0[j] = 0.0
    live_idx = t_idx[live]
    n = max(live_idx.size, 1)

    def fun(x):
        t = x[live_idx]
        if alpha == 1:
            return -np.log(t).sum() / n
        return -(t ** (1.0 - alpha)).sum() / (1.0 - alpha) / n

    def jac(x):
        g = np.zeros_like(x)
        g[live_idx] = -(x[live_idx] ** (-alpha)) / n
        return g

    cons = []
    if A_eq.size:
        cons.append({"type": "eq", "fun": lambda x: A_eq @ x - b_eq, "jac": lambda x: A_eq})
    if A_ub.size:
        cons.append({"type": "ineq", "fun": lambda x: b_ub - A_ub @ x, "jac": lambda x: -A_ub})
    def solve(start):
        # the line search can stall at rounding level under a very tight ftol; relax and retry
        for tol in (ftol, ftol * 1e2, ftol * 1e4):
            with warnings.catch_warnings():
                # SLSQP steps slightly outside the box and clips; the result is projected anyway
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(fun, start, jac=jac, method="SLSQP", bounds=list(zip(lb, ub)),
                               constraints=cons, options={"ftol": tol, "maxiter": maxiter})
            if res.success:
                return res
        raise OracleError(f"SLSQP failed: {res.message}")

    # SLSQP can report success early when the bandwidth split is degenerate; restarting
    # from its own point rebuilds the quasi-Newton model and continues the ascent
    res = solve(x0)
    for _ in range(restarts):
        nxt = solve(res.x)
        if nxt.fun >= res.fun - 1e-13 * max(1.0, abs(res.fun)):
            break
        res = nxt
    return _to_solution(inst, _project(inst, res.x, lb, ub))


def _rate_efficiencies(inst):
    parts = [inst.gbs_user_eff] + [d.user_eff if d.backhaul_eff > 0 else np.zeros_like(d.user_eff)
                                   for d in inst.drones]
    return np.concatenate(parts) if parts else np.zeros(0)


def _project(inst, x, lb, ub):
    """Clip solver output into the feasible set (removes ~1e-10 constraint noise)."""
    s = _SCALE
    x = np.clip(x, lb, ub)
    ng, blocks, wb0, nvar = _layout(inst)

    def fix(w, W):
        if w.size:
            w += (W - w.sum()) / w.size

    if ng:
        fix(x[:ng], inst.w_ground / s)
        x[ng:2 * ng] = np.minimum(x[ng:2 * ng], x[:ng] * inst.gbs_user_eff)
    if inst.drones:
        fix(x[wb0:nvar], inst.w_backhaul / s)
    t_all = []
    for a, (w0, w1, t0, t1) in enumerate(blocks):
        fix(x[w0:w1], inst.w_air / s)
        x[t0:t1] = np.minimum(x[t0:t1], x[w0:w1] * inst.drones[a].user_eff)
        room = x[wb0 + a] * inst.drones[a].backhaul_eff
        tot = x[t0:t1].sum()
        if tot > room:
            x[t0:t1] *= room / tot
        t_all += list(range(t0, t1))
    t_all = list(range(ng, 2 * ng)) + t_all
    if math.isfinite(inst.tau) and t_all:
        tot = x[t_all].sum()
        if tot > inst.tau / s:
            x[t_all] *= inst.tau / s / tot
    return np.maximum(x, 0.0)


def _linear(inst: AllocationInstance) -> AllocationSolution:
    A_eq, b_eq, A_ub, b_ub, lb, ub, t_idx = _constraints(inst)
    c = np.zeros(lb.size)
    c[t_idx] = -1.0
    res = linprog(c, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                  A_eq=A_eq if A_eq.size else None, b_eq=b_eq if A_eq.size else None,
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status != 0:
        raise OracleError(f"linprog failed: {res.message}")
    return _to_solution(inst, _project(inst, res.x, lb, ub))


def _maxmin(inst: AllocationInstance, iters: int = 200) -> AllocationSolution:
    """Largest rate t every user can get simultaneously, by bisection."""
    s = _SCALE
    wg_min, wa_min, wb_min = inst.w_ground_min / s, inst.w_air_min / s, inst.w_backhaul_min / s
    WG, WA, WB = inst.w_ground / s, inst.w_air / s, inst.w_backhaul / s

    def need(effs, t, wmin):
        if t == 0:
            return wmin * effs.size
        if (effs <= 0).any():
            return math.inf
        return float(np.maximum(wmin, t / effs).sum())

    def feasible(t):
        if need(inst.gbs_user_eff, t, wg_min) > WG:
            return False
        bh = 0.0
        for d in inst.drones:
            if need(d.user_eff, t, wa_min) > WA:
                return False
            n = d.user_eff.size
            if n and t > 0:
                if d.backhaul_eff <= 0:
                    return False
                bh += max(wb_min, n * t / d.backhaul_eff)
            else:
                bh += wb_min
        if bh > WB:
            return False
        return inst.n_users * t <= inst.tau / s

    hi = 1.0
    while feasible(hi):
        hi *= 2.0
        if hi > 1e30:
            break
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    t = lo
    ng, blocks, wb0, nvar = _layout(inst)
    x = np.zeros(nvar)

    def spread(effs, wmin, W):
        w = np.full(effs.size, wmin) if t == 0 else np.maximum(wmin, t / np.where(effs > 0, effs, 1))
        if w.size:
            w[0] += W - w.sum()
        return w

    if ng:
        x[:ng] = spread(inst.gbs_user_eff, wg_min, WG)
        x[ng:2 * ng] = t
    for a, (w0, w1, t0, t1) in enumerate(blocks):
        d = inst.drones[a]
        x[w0:w1] = spread(d.user_eff, wa_min, WA)
        x[t0:t1] = t
        x[wb0 + a] = max(wb_min, (w1 - w0) * t / d.backhaul_eff) if (w1 > w0 and t > 0) else wb_min
    if inst.drones:
        x[wb0] += WB - x[wb0:nvar].sum()
    return _to_solution(inst, x)


def numeric_convex_oracle(inst: AllocationInstance, ftol: float = 1e-14,
                          maxiter: int = 3000) -> AllocationSolution:
    inst.validate()
    if math.isinf(inst.alpha):
        return _maxmin(inst)
    if inst.alpha == 0:
        return _linear(inst)
    return _slsqp(inst, ftol, maxiter)
