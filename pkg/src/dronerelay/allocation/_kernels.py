"""Compiled kernels for the per-gBS bandwidth allocation program.

Units are whatever the caller passes (the Python layer uses MHz and Mbps so
prices stay near unity). Notation inside one gBS:

    eg            spectral efficiencies of the gBS's own users
    ed, dptr      drone users' efficiencies, drone a owns ed[dptr[a]:dptr[a+1]]
    b             backhaul efficiency of each drone
    WG/WA/WB      basket budgets, wminG/wminA/wminB the per-link minima
    tau           backbone capacity (inf when unbounded)

For 0 < alpha < inf the program is solved through its KKT prices: a backbone
price `lam` on every bit, a backhaul price `pi` per Hz of the shared backhaul
pool, and a per-basket bandwidth price `nu`. For a basket facing a per-bit
price q the best response is

    T_i = min(L, max(wmin*e_i, (q + nu/e_i)^(-1/alpha))),   L = q^(-1/alpha)

with nu >= 0 set so the basket's bandwidth is exactly used. Every price is
found by a monotone one-dimensional root search. With q = 0 the response is
the classic closed form w_i ~ e_i^((1-alpha)/alpha) with the low-share users
pinned at the minimum.
"""
import math

import numpy as np
from numba import njit

INF = np.inf
_MAXIT = 300


# ---------------------------------------------------------------------------
# helpers


@njit(cache=True, nogil=True)
def _propose(lo, hi, flo, fhi):
    """Next trial point in a bracket with flo > 0 >= fhi."""
    if hi > 1e3 * lo:
        return math.sqrt(max(lo, 1e-300) * hi)
    x = hi - fhi * (hi - lo) / (fhi - flo)
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    return x


@njit(cache=True, nogil=True)
def _fix_sum(w, W, wmin):
    """Absorb the rounding residual of sum(w) == W into the largest entry."""
    n = w.size
    if n == 0:
        return
    r = W - w.sum()
    k = int(np.argmax(w))
    w[k] += r
    if w[k] < wmin:
        w[k] = wmin


# ---------------------------------------------------------------------------
# single basket responses, 0 < alpha < inf


@njit(cache=True, nogil=True)
def unbounded_share(e, W, wmin, alpha, w):
    """Zero-price optimum: w_i = max(wmin, c * e_i^p), p = (1-alpha)/alpha.

    Users are pinned at the minimum in increasing order of their unclamped
    share. Zero-efficiency users always sit at the minimum.
    """
    n = e.size
    if n == 0:
        return
    p = (1.0 - alpha) / alpha
    for i in range(n):
        w[i] = wmin
    nz = 0
    top = -INF
    for i in range(n):
        if e[i] > 0.0:
            nz += 1
            v = p * math.log(e[i])
            if v > top:
                top = v
    if nz == 0:
        w[0] += W - n * wmin
        return
    idx = np.empty(nz, np.int64)
    s = np.empty(nz)
    k = 0
    for i in range(n):
        if e[i] > 0.0:
            idx[k] = i
            s[k] = math.exp(p * math.log(e[i]) - top)
            k += 1
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    suffix = np.empty(nz + 1)
    suffix[nz] = 0.0
    for j in range(nz - 1, -1, -1):
        suffix[j] = suffix[j + 1] + ss[j]
    wrem = W - (n - nz) * wmin
    k = 0
    c = 0.0
    while k < nz:
        c = (wrem - k * wmin) / suffix[k]
        if c * ss[k] >= wmin:
            break
        k += 1
    if k == nz:
        w[idx[order[nz - 1]]] += max(0.0, W - n * wmin)
        return
    for j in range(k, nz):
        w[idx[order[j]]] = c * ss[j]


@njit(cache=True, nogil=True)
def priced_basket(e, W, wmin, q, alpha, w, T):
    """Best response of one basket to a per-bit price q; returns sum(T)."""
    n = e.size
    if n == 0:
        return 0.0
    if q == 0.0:
        unbounded_share(e, W, wmin, alpha, w)
        tot = 0.0
        for i in range(n):
            T[i] = w[i] * e[i]
            tot += T[i]
        return tot
    if q == INF:
        for i in range(n):
            w[i] = W / n
            T[i] = 0.0
        return 0.0
    ia = 1.0 / alpha
    L = q ** (-ia)
    need = 0.0
    for i in range(n):
        if e[i] > 0.0:
            need += max(wmin, L / e[i])
        else:
            need += wmin
    if need <= W:
        spare = (W - need) / n
        tot = 0.0
        for i in range(n):
            if e[i] > 0.0:
                w[i] = max(wmin, L / e[i]) + spare
                T[i] = L
            else:
                w[i] = wmin + spare
                T[i] = 0.0
            tot += T[i]
        return tot
    if n * wmin >= W:
        tot = 0.0
        for i in range(n):
            w[i] = W / n
            T[i] = min(L, w[i] * e[i])
            tot += T[i]
        return tot
    # nu > 0: sum_i max(wmin, f_i(nu)) = W, f_i = (q + nu/e_i)^(-1/alpha) / e_i
    hi = 0.0
    for i in range(n):
        if e[i] > 0.0:
            bp = e[i] * ((wmin * e[i]) ** (-alpha) - q)
            if bp > hi:
                hi = bp
    lo = 0.0
    flo = need - W
    fhi = n * wmin - W
    nu = 0.0
    for _ in range(_MAXIT):
        # Newton step on the convex decreasing residual, kept inside the bracket
        g = -W
        dg = 0.0
        for i in range(n):
            if e[i] > 0.0:
                base = q + nu / e[i]
                f = base ** (-ia) / e[i]
                if f > wmin:
                    g += f
                    dg -= ia * f / (base * e[i])
                else:
                    g += wmin
            else:
                g += wmin
        if g > 0.0:
            lo = nu
            flo = g
        else:
            hi = nu
            fhi = g
            if g == 0.0:
                lo = nu
                break
        if hi - lo <= 1e-15 * hi:
            break
        # Newton crawls from far left on a wide bracket; bisect geometrically there
        x = nu - g / dg if (dg < 0.0 and hi <= 1e3 * lo) else -1.0
        if not (lo < x < hi):
            x = _propose(lo, hi, flo, fhi)
        if x == nu:
            break
        nu = x
    # Newton may stall just left of the root; the residual there is rounding-level
    if hi - lo > 1e-12 * hi:
        nu = lo
    else:
        nu = hi
    tot = 0.0
    for i in range(n):
        if e[i] > 0.0:
            f = (q + nu / e[i]) ** (-ia) / e[i]
            w[i] = max(wmin, f)
            T[i] = min(L, w[i] * e[i])
        else:
            w[i] = wmin
            T[i] = 0.0
    _fix_sum(w, W, wmin)
    for i in range(n):
        T[i] = min(T[i], w[i] * e[i])
        tot += T[i]
    return tot


@njit(cache=True, nogil=True)
def capped_basket(e, W, wmin, cap, alpha, w, T):
    """Basket optimum when its total throughput may not exceed `cap`."""
    tot = priced_basket(e, W, wmin, 0.0, alpha, w, T)
    if tot <= cap:
        return tot
    lo = 0.0
    flo = tot - cap
    hi = 1.0
    fhi = priced_basket(e, W, wmin, hi, alpha, w, T) - cap
    while fhi > 0.0:
        lo = hi
        flo = fhi
        hi *= 16.0
        fhi = priced_basket(e, W, wmin, hi, alpha, w, T) - cap
    side = 0
    for _ in range(_MAXIT):
        if hi - lo <= 1e-15 * hi or fhi == 0.0:
            break
        x = _propose(lo, hi, flo, fhi)
        fx = priced_basket(e, W, wmin, x, alpha, w, T) - cap
        if fx > 0.0:
            lo = x
            flo = fx
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi = x
            fhi = fx
            if side == -1:
                flo *= 0.5
            side = -1
    return priced_basket(e, W, wmin, hi, alpha, w, T)


# ---------------------------------------------------------------------------
# drones and the backhaul pool, 0 < alpha < inf


@njit(cache=True, nogil=True)
def drone_response(e, WA, wminA, b, wminB, lam, pi, alpha, w, T):
    """Drone basket response to backbone price lam and backhaul price pi.

    Returns (aggregate throughput, backhaul bandwidth demand).
    """
    n = e.size
    if b <= 0.0 or n == 0:
        for i in range(n):
            w[i] = WA / n
            T[i] = 0.0
        return 0.0, wminB
    cap0 = wminB * b
    q1 = lam + pi / b
    s1 = priced_basket(e, WA, wminA, q1, alpha, w, T)
    if s1 >= cap0:
        return s1, s1 / b
    s0 = priced_basket(e, WA, wminA, lam, alpha, w, T)
    if s0 <= cap0:
        return s0, wminB
    # backhaul sits exactly at its minimum: find the partial price kappa
    lo = 0.0
    flo = s0 - cap0
    if q1 == INF:
        hi = max(1.0, lam)
        fhi = priced_basket(e, WA, wminA, lam + hi, alpha, w, T) - cap0
        while fhi > 0.0:
            lo = hi
            flo = fhi
            hi *= 16.0
            fhi = priced_basket(e, WA, wminA, lam + hi, alpha, w, T) - cap0
    else:
        hi = pi / b
        fhi = s1 - cap0
    side = 0
    for _ in range(_MAXIT):
        if hi - lo <= 1e-15 * hi or fhi == 0.0:
            break
        x = _propose(lo, hi, flo, fhi)
        fx = priced_basket(e, WA, wminA, lam + x, alpha, w, T) - cap0
        if fx > 0.0:
            lo = x
            flo = fx
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi = x
            fhi = fx
            if side == -1:
                flo *= 0.5
            side = -1
    s = priced_basket(e, WA, wminA, lam + hi, alpha, w, T)
    return s, wminB


@njit(cache=True, nogil=True)
def _drones_at(ed, dptr, b, WA, wminA, wminB, lam, pi, alpha, wd, Td, wB, TB):
    nd = b.size
    demand = 0.0
    for a in range(nd):
        s, wb = drone_response(ed[dptr[a]:dptr[a + 1]], WA, wminA, b[a], wminB, lam, pi, alpha,
                               wd[dptr[a]:dptr[a + 1]], Td[dptr[a]:dptr[a + 1]])
        TB[a] = s
        wB[a] = wb
        demand += wb
    return demand


@njit(cache=True, nogil=True)
def _drones_cleared(ed, dptr, b, WA, wminA, WB, wminB, lam, alpha, wd, Td, wB, TB):
    """Drone responses at backbone price lam with the backhaul market cleared."""
    nd = b.size
    if nd == 0:
        return 0.0
    d0 = _drones_at(ed, dptr, b, WA, wminA, wminB, lam, 0.0, alpha, wd, Td, wB, TB)
    if d0 > WB:
        if nd * wminB >= WB:
            _drones_at(ed, dptr, b, WA, wminA, wminB, lam, INF, alpha, wd, Td, wB, TB)
        else:
            lo = 0.0
            flo = d0 - WB
            hi = 1.0
            fhi = _drones_at(ed, dptr, b, WA, wminA, wminB, lam, hi, alpha, wd, Td, wB, TB) - WB
            while fhi > 0.0:
                lo = hi
                flo = fhi
                hi *= 16.0
                fhi = _drones_at(ed, dptr, b, WA, wminA, wminB, lam, hi, alpha, wd, Td, wB, TB) - WB
            side = 0
            for _ in range(_MAXIT):
                if hi - lo <= 1e-15 * hi or fhi == 0.0:
                    break
                x = _propose(lo, hi, flo, fhi)
                fx = _drones_at(ed, dptr, b, WA, wminA, wminB, lam, x, alpha, wd, Td, wB, TB) - WB
                if fx > 0.0:
                    lo = x
                    flo = fx
                    if side == 1:
                        fhi *= 0.5
                    side = 1
                else:
                    hi = x
                    fhi = fx
                    if side == -1:
                        flo *= 0.5
                    side = -1
            _drones_at(ed, dptr, b, WA, wminA, wminB, lam, hi, alpha, wd, Td, wB, TB)
    return TB.sum()


@njit(cache=True, nogil=True)
def _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, lam, alpha, wg, Tg, wd, Td, wB, TB):
    tg = priced_basket(eg, WG, wminG, lam, alpha, wg, Tg)
    return tg + _drones_cleared(ed, dptr, b, WA, wminA, WB, wminB, lam, alpha, wd, Td, wB, TB)


@njit(cache=True, nogil=True)
def solve_fair(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, alpha, wg, Tg, wd, Td, wB, TB):
    """Exact optimum for 0 < alpha < inf. Fills the output arrays."""
    tot = _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, 0.0, alpha,
                    wg, Tg, wd, Td, wB, TB)
    if tot > tau:
        lo = 0.0
        flo = tot - tau
        ntot = eg.size + ed.size
        hi = (tau / max(ntot, 1)) ** (-alpha)
        fhi = _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, hi, alpha,
                        wg, Tg, wd, Td, wB, TB) - tau
        while fhi > 0.0:
            lo = hi
            flo = fhi
            hi *= 16.0
            fhi = _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, hi, alpha,
                            wg, Tg, wd, Td, wB, TB) - tau
        side = 0
        for _ in range(_MAXIT):
            if hi - lo <= 1e-15 * hi or fhi == 0.0:
                break
            x = _propose(lo, hi, flo, fhi)
            fx = _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, x, alpha,
                           wg, Tg, wd, Td, wB, TB) - tau
            if fx > 0.0:
                lo = x
                flo = fx
                if side == 1:
                    fhi *= 0.5
                side = 1
            else:
                hi = x
                fhi = fx
                if side == -1:
                    flo *= 0.5
                side = -1
        _total_at(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, hi, alpha,
                  wg, Tg, wd, Td, wB, TB)
    finish(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB)


# ---------------------------------------------------------------------------
# budget levelling and the linear / max-min regimes


@njit(cache=True, nogil=True)
def level_down(x, X):
    """Lower the largest entries to a common level so that sum(x) == X (in place).

    Ties at the top are reduced together, one plateau at a time.
    """
    n = x.size
    tot = x.sum()
    if tot <= X or n == 0:
        return
    order = np.argsort(-x, kind="mergesort")
    xs = x[order]
    excess = tot - X
    k = 1
    while True:
        while k < n and xs[k] == xs[0]:
            k += 1
        nxt = xs[k] if k < n else 0.0
        room = k * (xs[0] - nxt)
        if room >= excess:
            level = xs[0] - excess / k
            for j in range(k):
                xs[j] = level
            break
        excess -= room
        for j in range(k):
            xs[j] = nxt
    for j in range(n):
        x[order[j]] = min(x[order[j]], xs[j])


@njit(cache=True, nogil=True)
def best_user_share(e, W, wmin, w, T):
    """Linear-utility basket optimum: the most efficient user takes the slack."""
    n = e.size
    if n == 0:
        return 0.0
    i0 = 0
    for i in range(1, n):
        if e[i] > e[i0]:
            i0 = i
    tot = 0.0
    for i in range(n):
        w[i] = wmin
    w[i0] = W - (n - 1) * wmin
    for i in range(n):
        T[i] = w[i] * e[i]
        tot += T[i]
    return tot


@njit(cache=True, nogil=True)
def fill_by_efficiency(e, T, cap):
    """Keep throughput of the most efficient users first until sum(T) <= cap."""
    n = e.size
    order = np.argsort(-e, kind="mergesort")
    left = cap
    for j in range(n):
        i = order[j]
        t = min(T[i], max(left, 0.0))
        T[i] = t
        left -= t


@njit(cache=True, nogil=True)
def solve_linear(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB):
    """Exact optimum for alpha = 0 (a linear program with greedy structure)."""
    nd = b.size
    best_user_share(eg, WG, wminG, wg, Tg)
    cap = np.zeros(nd)
    for a in range(nd):
        s = slice(dptr[a], dptr[a + 1])
        cap[a] = best_user_share(ed[s], WA, wminA, wd[s], Td[s])
        wB[a] = wminB
    rem = WB - nd * wminB
    order = np.argsort(-b, kind="mergesort")
    for j in range(nd):
        a = order[j]
        if b[a] > 0.0:
            give = min(max(cap[a] / b[a] - wminB, 0.0), rem)
            wB[a] += give
            rem -= give
    if nd:
        wB[0] += rem
    for a in range(nd):
        s = slice(dptr[a], dptr[a + 1])
        bh = wB[a] * b[a]
        if cap[a] > bh:
            fill_by_efficiency(ed[s], Td[s], bh)
        TB[a] = Td[s].sum()
    if Tg.sum() + Td.sum() > tau:
        if nd == 0:
            fill_by_efficiency(eg, Tg, tau)
        else:
            _level_all(Tg, Td, tau)
    finish(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB)


@njit(cache=True, nogil=True)
def _level_all(Tg, Td, tau):
    ng = Tg.size
    x = np.concatenate((Tg, Td))
    level_down(x, tau)
    Tg[:] = x[:ng]
    Td[:] = x[ng:]


@njit(cache=True, nogil=True)
def maxmin_share(e, W, wmin, w, T):
    """Max-min basket optimum: raise the poorest users to a common rate.

    Users whose rate at the minimum bandwidth already exceeds the common
    level stay at the minimum. Zero-efficiency users stay at the minimum.
    """
    n = e.size
    if n == 0:
        return 0.0
    for i in range(n):
        w[i] = wmin
        T[i] = wmin * e[i]
    pos = 0
    for i in range(n):
        if e[i] > 0.0:
            pos += 1
    if pos == 0:
        w[0] += W - n * wmin
        return 0.0
    idx = np.empty(pos, np.int64)
    k = 0
    for i in range(n):
        if e[i] > 0.0:
            idx[k] = i
            k += 1
    order = idx[np.argsort(T[idx], kind="mergesort")]
    budget = W - n * wmin
    # users order[:m] share the level; grow m while the level passes the next rate
    inv = 0.0
    base = 0.0
    level = 0.0
    m = 0
    while m < pos:
        i = order[m]
        inv += 1.0 / e[i]
        base += wmin
        m += 1
        level = (budget + base) / inv
        if m < pos and level > T[order[m]]:
            continue
        break
    for j in range(m):
        i = order[j]
        w[i] = level / e[i]
        T[i] = level
    _fix_sum(w, W, wmin)
    tot = 0.0
    for i in range(n):
        T[i] = min(T[i], w[i] * e[i])
        tot += T[i]
    return tot


@njit(cache=True, nogil=True)
def _backhaul_demand_at(level, ed, dptr, b, Td_cap, wminB):
    nd = b.size
    d = 0.0
    for a in range(nd):
        if b[a] <= 0.0:
            d += wminB
            continue
        s = 0.0
        for i in range(dptr[a], dptr[a + 1]):
            s += min(Td_cap[i], level)
        d += max(wminB, s / b[a])
    return d


@njit(cache=True, nogil=True)
def solve_maxmin(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB):
    """Max-min optimum (alpha -> inf)."""
    nd = b.size
    maxmin_share(eg, WG, wminG, wg, Tg)
    for a in range(nd):
        s = slice(dptr[a], dptr[a + 1])
        maxmin_share(ed[s], WA, wminA, wd[s], Td[s])
        if b[a] <= 0.0:
            Td[s] = 0.0
    if nd:
        cap = Td.copy()
        top = cap.max() if cap.size else 0.0
        if _backhaul_demand_at(top, ed, dptr, b, cap, wminB) > WB:
            # largest common cap on drone-user rates the backhaul pool can carry
            lo = 0.0
            hi = top
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if _backhaul_demand_at(mid, ed, dptr, b, cap, wminB) <= WB:
                    lo = mid
                else:
                    hi = mid
            for i in range(Td.size):
                Td[i] = min(cap[i], lo)
        for a in range(nd):
            s = slice(dptr[a], dptr[a + 1])
            TB[a] = Td[s].sum()
            wB[a] = max(wminB, TB[a] / b[a]) if b[a] > 0.0 else wminB
        wB[0] += WB - wB.sum()
    if Tg.sum() + Td.sum() > tau:
        if nd == 0:
            _uniform_cut(Tg, tau)
        else:
            _level_all(Tg, Td, tau)
    finish(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB)


@njit(cache=True, nogil=True)
def _uniform_cut(T, tau):
    """Bounded-backbone max-min step: clip every rate to the minimum, then
    subtract the remaining excess evenly."""
    n = T.size
    if n == 0:
        return
    tmin = T.min()
    for i in range(n):
        T[i] = tmin
    tot = n * tmin
    if tot > tau:
        r = (tot - tau) / n
        for i in range(n):
            T[i] = max(tmin - r, 0.0)


# ---------------------------------------------------------------------------
# final repair: remove rounding residue so every constraint holds exactly


@njit(cache=True, nogil=True)
def finish(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB):
    nd = b.size
    _fix_sum(wg, WG, wminG)
    for i in range(eg.size):
        Tg[i] = max(0.0, min(Tg[i], wg[i] * eg[i]))
    for a in range(nd):
        s = slice(dptr[a], dptr[a + 1])
        _fix_sum(wd[s], WA, wminA)
    for i in range(ed.size):
        Td[i] = max(0.0, min(Td[i], wd[i] * ed[i]))
    if nd:
        tot = wB.sum()
        if tot < WB:
            wB[0] += WB - tot
        elif tot > WB:
            k = int(np.argmax(wB))
            wB[k] -= tot - WB
            if wB[k] < wminB:
                wB[k] = wminB
    for a in range(nd):
        s = slice(dptr[a], dptr[a + 1])
        agg = Td[s].sum()
        capb = wB[a] * b[a]
        if agg > capb:
            f = capb / agg
            for i in range(dptr[a], dptr[a + 1]):
                Td[i] *= f
            agg = Td[s].sum()
        TB[a] = min(agg, capb)
    tot = Tg.sum() + TB.sum()
    if tot > tau:
        f = tau / tot
        for i in range(Tg.size):
            Tg[i] *= f
        for i in range(Td.size):
            Td[i] *= f
        for a in range(nd):
            TB[a] = Td[dptr[a]:dptr[a + 1]].sum()


@njit(cache=True, nogil=True)
def solve_gbs(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, alpha, wg, Tg, wd, Td, wB, TB):
    if alpha == 0.0:
        solve_linear(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB)
    elif alpha == INF:
        solve_maxmin(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, wg, Tg, wd, Td, wB, TB)
    else:
        solve_fair(eg, ed, dptr, b, WG, wminG, WA, wminA, WB, wminB, tau, alpha,
                   wg, Tg, wd, Td, wB, TB)
