"""Alpha-fair utility, Jain's index and least-fit drone selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def alpha_fair_utility(throughputs, alpha: float) -> float:
    """Sum of T^(1-alpha)/(1-alpha); sum of log T at alpha=1; min T at alpha=inf.

    A zero rate under alpha >= 1 makes the value -inf; callers flag that case
    as degenerate (see is_degenerate).
    """
    t = np.asarray(throughputs, dtype=float).ravel()
    if (t < 0).any():
        raise ValueError("throughputs must be non-negative")
    if math.isinf(alpha):
        return float(t.min()) if t.size else math.inf
    if alpha == 0:
        return float(t.sum())
    if alpha >= 1 and (t == 0).any():
        return -math.inf
    if alpha == 1:
        return float(np.log(t).sum())
    return float((t ** (1.0 - alpha)).sum() / (1.0 - alpha))


def is_degenerate(throughputs, alpha: float) -> bool:
    t = np.asarray(throughputs, dtype=float)
    return bool(alpha >= 1 and not math.isinf(alpha) and (t == 0).any())


def jain_index(throughputs) -> float:
    t = np.asarray(throughputs, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("empty throughput vector")
    sq = float((t * t).sum())
    if sq == 0.0:
        raise ValueError("Jain's index undefined for an all-zero vector")
    return float(t.sum()) ** 2 / (t.size * sq)


def relative_gain(new, old, floor: float = 1e-9) -> float:
    """(new - old) / max(|old|, floor), with +inf/-inf handled sensibly."""
    if new == old:
        return 0.0
    if math.isinf(old) and old < 0:
        return math.inf
    if math.isinf(new):
        return math.inf if new > 0 else -math.inf
    return (new - old) / max(abs(old), floor)


def score_gain(new: tuple, old: tuple, alpha: float, floor: float = 1e-9) -> float:
    """Relative improvement between two comparison keys (see NetworkState.score).

    Under max-min the key is (min rate, total rate) compared lexicographically:
    the min decides, and the total only breaks ties.
    """
    if not math.isinf(alpha):
        return relative_gain(new[0], old[0], floor)
    if new[0] != old[0]:
        return relative_gain(new[0], old[0], floor)
    return relative_gain(new[1], old[1], floor)


@dataclass
class UtilityReport:
    total_utility: float
    per_bs_utility: dict = field(default_factory=dict)
    aggregate_throughput: float = 0.0
    jain: float = float("nan")
    alpha: float = 1.0


def utility_report(state) -> UtilityReport:
    """Per-BS breakdown of a NetworkState (BS ids as in state.user_bs)."""
    per = {}
    served = state.user_bs >= 0
    for bs in np.unique(state.user_bs[served]):
        per[int(bs)] = alpha_fair_utility(state.user_tput[state.user_bs == bs], state.alpha)
    return UtilityReport(state.utility, per, state.aggregate_tput, state.jain, state.alpha)


@dataclass(frozen=True)
class DroneFitness:
    """Utility of one drone's users and its two counterfactuals."""

    utility: float
    utility_unlimited_backhaul: float
    utility_no_interference: float
    n_users: int = 1


def fitness_indicator(f: DroneFitness) -> float:
    """Largest relative gap to either counterfactual; a gap whose reference is 0 is skipped.

    A drone that serves nobody contributes nothing and is ranked least fit.
    """
    if f.n_users == 0:
        return math.inf
    gaps = []
    for ref in (f.utility_unlimited_backhaul, f.utility_no_interference):
        if ref == 0 or not math.isfinite(ref):
            continue
        u = f.utility
        if not math.isfinite(u):
            gaps.append(math.inf)
            continue
        gaps.append(abs((ref - u) / ref))
    return max(gaps) if gaps else 0.0


def least_fit_drone(fitness: Sequence[DroneFitness], exclude=()) -> int:
    """Index of the drone with the largest indicator; ties go to the lowest id.

    Returns -1 when every drone is excluded.
    """
    best, best_val = -1, -math.inf
    for a, f in enumerate(fitness):
        if a in exclude:
            continue
        v = fitness_indicator(f)
        if v > best_val:
            best, best_val = a, v
    return best
