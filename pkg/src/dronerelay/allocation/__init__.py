"""Exact per-gBS bandwidth allocation and its numeric validation oracle."""
from .solver import (AllocationInstance, AllocationSolution, DroneBasket, InfeasibleError,
                     allocate_generic, allocate_no_drones, allocate_single_drone,
                     reduce_to_budget, residuals, solve_packed)

__all__ = [
    "AllocationInstance", "AllocationSolution", "DroneBasket", "InfeasibleError",
    "allocate_generic", "allocate_no_drones", "allocate_single_drone", "reduce_to_budget",
    "residuals", "solve_packed", "numeric_convex_oracle",
]


def numeric_convex_oracle(instance, **kw):
    from .oracle import numeric_convex_oracle as _oracle
    return _oracle(instance, **kw)
