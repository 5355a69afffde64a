"""Per-core memory bandwidth regulator for best-effort cores.

A periodic handler replenishes each core's budget (tight while the
real-time core's current task holds the bandwidth lock, unlimited
otherwise) and releases throttled cores; an overflow handler throttles a
core once its budget is spent.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .fairsched import SchedEntity, tfs_inflate


@dataclass
class CoreRegulatorState:
    core_id: int
    budget: Fraction = Fraction(0)  # programmed for the current period
    remaining_budget: Fraction = Fraction(0)
    throttled: bool = False
    regulated: bool = False  # budget is the throttle budget, not the unlimited one
    period_index: int = -1
    current_entity: SchedEntity | None = None


def close_throttle(state, now, rho):
    """Unthrottle ``state``'s core at ``now``; returns the throttled span.

    The span accrues to the entity that was running when the core was
    throttled, then TFS scaling is applied to it.
    """
    ent = state.current_entity
    delta = now - ent.throttle_start
    ent.throttled_delta += delta
    ent.total_throttled += delta
    ent.throttle_start = None
    tfs_inflate(ent, rho)
    state.throttled = False
    return delta


def on_period_begin(state, lock, config, now, rho):
    """Start a regulation period at ``now``.

    Returns the throttled span closed by this call (zero if the core was
    not throttled).
    """
    delta = Fraction(0)
    if state.throttled:
        delta = close_throttle(state, now, rho)
    state.regulated = lock.bwlock_val == 1
    state.budget = Fraction(config.throttle_budget if state.regulated else config.max_budget)
    state.remaining_budget = state.budget
    state.period_index += 1
    return delta


def on_budget_exhausted(state, now):
    if not state.regulated:
        raise AssertionError(f"core {state.core_id} exhausted an unlimited budget")
    ent = state.current_entity
    if ent is None:
        raise AssertionError(f"core {state.core_id} exhausted its budget while idle")
    state.throttled = True
    state.remaining_budget = Fraction(0)
    ent.throttle_start = now
    return state
