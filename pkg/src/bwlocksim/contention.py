"""Budget consumption and CPU-to-GPU memory contention model."""

from .model import ContentionMode


def time_to_exhaust(demand_rate, budget, period):
    """Return ``(t, delta)``: when a core running at ``demand_rate`` from the
    start of a period burns through ``budget``, and the idle remainder.

    Exhausting the budget exactly at the period end counts as unthrottled.
    """
    if demand_rate == 0 or demand_rate * period <= budget:
        return period, 0 * period
    t = budget / demand_rate
    return t, period - t


def consumed_bytes(demand_rate, interval, remaining_budget):
    return min(demand_rate * interval, remaining_budget)


def gpu_slowdown_factor(aggregate_bw, params):
    """Factor by which GPU kernels and copies stretch while best-effort cores
    draw ``aggregate_bw`` bytes/ms in total."""
    if params.mode is ContentionMode.NONE:
        return 1
    return 1 + params.alpha * aggregate_bw / params.bw_ref


def calibrate_alpha(target_factor, corunner_rates, bw_ref):
    """Linear-model alpha that yields ``target_factor`` when every co-runner
    runs unthrottled."""
    u = sum(corunner_rates)
    if u == 0:
        raise ValueError("cannot calibrate against zero co-runner bandwidth")
    return (target_factor - 1) * bw_ref / u
