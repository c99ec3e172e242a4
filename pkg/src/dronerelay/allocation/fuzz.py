"""Random per-gBS programs and the exact-vs-oracle comparison used by tests and the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .solver import (AllocationInstance, DroneBasket, allocate_generic, allocate_no_drones,
                     allocate_single_drone, residuals)

CASES = ("no-drone", "single-drone", "generic")
ALPHAS = (0.0, 0.25, 0.5, 1.0, math.inf)


def random_instance(case: str, alpha: float, rng) -> AllocationInstance:
    """Efficiencies log-uniform in [0.1, 10] bps/Hz; tau and W_B drawn so their caps bind sometimes."""
    if case == "no-drone":
        nd = 0
    elif case == "single-drone":
        nd = 1
    elif case == "generic":
        nd = int(rng.integers(2, 5))
    else:
        raise ValueError(f"unknown case {case!r}")
    ng = int(rng.integers(1 if nd == 0 else 0, 7))
    drones = [DroneBasket(10 ** rng.uniform(-0.5, 1.0), 10 ** rng.uniform(-1, 1, size=rng.integers(1, 6)))
              for _ in range(nd)]
    tau = [math.inf, 5e6, 20e6, 60e6][int(rng.integers(0, 4))]
    wb = 18e6 if rng.random() < 0.5 else 4e6
    return AllocationInstance(10 ** rng.uniform(-1, 1, size=ng), drones, tau=tau, alpha=alpha,
                              w_backhaul=wb)


def solve_case(case: str, inst: AllocationInstance):
    if case == "no-drone":
        return allocate_no_drones(inst.gbs_user_eff, inst.w_ground, inst.w_ground_min, inst.tau, inst.alpha)
    if case == "single-drone":
        return allocate_single_drone(inst)
    return allocate_generic(inst)


@dataclass
class FuzzRecord:
    case: str
    alpha: float
    index: int
    exact: float
    oracle: float
    rel_diff: float
    residual: float

    def ok(self, rtol: float = 1e-5, res_tol: float = 1e-9) -> bool:
        return self.rel_diff <= rtol and self.residual <= res_tol


def compare(case: str, inst: AllocationInstance, index: int = 0) -> FuzzRecord:
    from .oracle import numeric_convex_oracle
    s = solve_case(case, inst)
    o = numeric_convex_oracle(inst)
    rel = abs(s.utility - o.utility) / max(abs(o.utility), 1e-9)
    res = max(residuals(inst, s).values())
    return FuzzRecord(case, inst.alpha, index, s.utility, o.utility, rel, res)


def fuzz(n: int, seed: int = 0, cases=CASES, alphas=ALPHAS):
    """n random instances per (case, alpha); each cell has its own stream."""
    out = []
    for ci, case in enumerate(cases):
        for ai, alpha in enumerate(alphas):
            rng = np.random.default_rng([seed, ci, ai])
            for i in range(n):
                out.append(compare(case, random_instance(case, float(alpha), rng), i))
    return out
