"""Built-in scenarios and randomized scenario generators."""

from __future__ import annotations

import random
from fractions import Fraction

from .contention import calibrate_alpha
from .model import (
    BestEffortTaskSpec,
    ContentionMode,
    ContentionParams,
    RtTaskSpec,
    Scenario,
    SchedulerMode,
    Segment,
    SegmentKind,
    SystemConfig,
    validate_scenario,
)

K = SegmentKind
NO_CONTENTION = ContentionParams(mode=ContentionMode.NONE)

# Worked-example rates: the memory-intensive task burns a 100 KB budget in a
# third of a 1 ms period; the CPU-bound one never reaches it.
EXAMPLE_BUDGET = 100_000
MEM_RATE = Fraction(300_000)
CPU_RATE = Fraction(10_000)

# Co-run calibration: three unthrottled 1 GB/s co-runners stretch GPU work 3.3x.
CORUN_RATE = Fraction(1_000_000)
CORUN_BW_REF = 3 * CORUN_RATE
CORUN_TARGET_SLOWDOWN = Fraction("3.3")
CORUN_ALPHA = calibrate_alpha(CORUN_TARGET_SLOWDOWN, [CORUN_RATE] * 3, CORUN_BW_REF)


def _locked_gpu_task(length, period=None, task_id="rt", priority=10):
    # one kernel the shim keeps locked from launch to device sync
    return RtTaskSpec(task_id, Fraction(period or length), priority,
                      (Segment(K.KERNEL, Fraction(length), 0), Segment(K.DEVICE_SYNC)))


def _example(scheduler, rho=3, mem_head_start=0):
    cfg = SystemConfig(n_cores=2, rt_core=0, throttle_budget=EXAMPLE_BUDGET,
                       tfs_rho=Fraction(rho), slowdown=NO_CONTENTION)
    be = (
        BestEffortTaskSpec("cpu", Fraction(1), CPU_RATE, 1, work=Fraction(4)),
        BestEffortTaskSpec("mem", Fraction(1), MEM_RATE, 1, work=Fraction(4),
                           initial_vruntime=Fraction(mem_head_start)),
    )
    rt = (_locked_gpu_task(4, period=15),)
    return Scenario(cfg, rt, be, Fraction(6), scheduler)


def fig4_cfs():
    return _example(SchedulerMode.CFS)


def fig4_tfs3():
    return _example(SchedulerMode.TFS, rho=3)


def fig4_ideal():
    """Constructed zero-throttle schedule: ``mem`` starts three periods behind
    in vruntime, so ``cpu`` covers the whole locked window. This is a
    hand-built schedule, not a scheduler mode."""
    return _example(SchedulerMode.CFS, mem_head_start=3)


def tfs_synthetic(scheduler=SchedulerMode.CFS, rho=1, periods=1000):
    """Intense/mild pair on one best-effort core under a 100 MB/s budget,
    with the bandwidth lock held for the whole run."""
    cfg = SystemConfig(n_cores=2, rt_core=0, throttle_budget=EXAMPLE_BUDGET,
                       tfs_rho=Fraction(rho), slowdown=NO_CONTENTION)
    be = (
        BestEffortTaskSpec("intense", Fraction(1), MEM_RATE, 1),
        BestEffortTaskSpec("mild", Fraction(1), CPU_RATE, 1),
    )
    return Scenario(cfg, (_locked_gpu_task(periods),), be, Fraction(periods), scheduler)


def tfs_sixcorun(scheduler=SchedulerMode.CFS, rho=1, periods=1000):
    """Six co-runners: a memory- and a CPU-intensive task on each of three
    best-effort cores, next to a GPU task that holds the lock throughout."""
    cfg = SystemConfig(n_cores=4, rt_core=0, throttle_budget=EXAMPLE_BUDGET,
                       tfs_rho=Fraction(rho), slowdown=NO_CONTENTION)
    be = []
    for core in (1, 2, 3):
        be.append(BestEffortTaskSpec(f"mem{core}", Fraction(1), MEM_RATE, core))
        be.append(BestEffortTaskSpec(f"cpu{core}", Fraction(1), CPU_RATE, core))
    return Scenario(cfg, (_locked_gpu_task(periods),), tuple(be), Fraction(periods), scheduler)


def corun(budget=1_000_000, duration=500):
    """GPU task with three memory-hogging co-runners.

    With the default budget the co-runners are never throttled, so the GPU
    task sees the calibrated worst-case stretch; lowering ``budget`` shows
    the regulator's protection.
    """
    cfg = SystemConfig(n_cores=4, rt_core=0, throttle_budget=budget,
                       slowdown=ContentionParams(ContentionMode.LINEAR, CORUN_ALPHA, CORUN_BW_REF))
    gpu = RtTaskSpec("gpu", Fraction(50), 10, (
        Segment(K.SYNC_COPY, Fraction(1)),
        Segment(K.KERNEL, Fraction(10), 0),
        Segment(K.DEVICE_SYNC),
        Segment(K.SYNC_COPY, Fraction(1)),
    ))
    be = tuple(BestEffortTaskSpec(f"bw{c}", Fraction(1), CORUN_RATE, c) for c in (1, 2, 3))
    return Scenario(cfg, (gpu,), be, Fraction(duration), SchedulerMode.CFS)


BUILTIN = {
    "fig4-cfs": fig4_cfs,
    "fig4-ideal": fig4_ideal,
    "fig4-tfs3": fig4_tfs3,
    "tfs-synthetic": tfs_synthetic,
    "tfs-sixcorun": tfs_sixcorun,
    "corun": corun,
}


def builtin(name):
    try:
        factory = BUILTIN[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; valid names: {', '.join(sorted(BUILTIN))}") from None
    return validate_scenario(factory())


# -- random generators ---------------------------------------------------------


def _half_ms(rng, lo, hi):
    return Fraction(rng.randint(2 * lo, 2 * hi), 2)


def random_segments(rng, budget):
    """Random program whose GPU phases are always synchronized before the
    next CPU phase, so its run time equals its nominal demand."""
    segs = [Segment(K.COMPUTE, _half_ms(rng, 1, 2))]
    left = budget - segs[0].duration
    for _ in range(rng.randint(0, 3)):
        if left < 1:
            break
        pattern = rng.randrange(6)
        a = min(left, _half_ms(rng, 1, 3))
        if pattern == 0:
            segs.append(Segment(K.COMPUTE, a))
        elif pattern == 1:
            segs.append(Segment(K.SYNC_COPY, a))
        elif pattern == 2:
            segs += [Segment(K.KERNEL, a, 0), Segment(K.DEVICE_SYNC)]
        elif pattern == 3:
            s = rng.randint(0, 2)
            segs += [Segment(K.KERNEL, a, s), Segment(K.STREAM_SYNC, stream=s)]
        elif pattern == 4:
            s = rng.randint(0, 2)
            segs += [Segment(K.ASYNC_COPY, Fraction(1, 2), s), Segment(K.KERNEL, a, s),
                     Segment(K.STREAM_SYNC, stream=s)]
        else:
            segs += [Segment(K.ASYNC_COPY, Fraction(1, 2), 0), Segment(K.KERNEL, a, 1),
                     Segment(K.DEVICE_SYNC)]
        left = budget - sum(g.duration for g in segs)
    return tuple(segs)


def random_rt_scenario(rng, max_tasks=5, max_utilization=Fraction(85, 100)):
    """Random single-core RT taskset with distinct priorities and no contention."""
    n = rng.randint(1, max_tasks)
    periods = [Fraction(rng.choice((10, 15, 20, 25, 30, 40, 50, 60))) for _ in range(n)]
    share = max_utilization / n
    tasks = []
    prios = rng.sample(range(1, 90), n)
    for i, (p, prio) in enumerate(zip(periods, prios)):
        budget = max(Fraction(2), p * share)
        tasks.append(RtTaskSpec(f"t{i}", p, prio, random_segments(rng, budget)))
    cfg = SystemConfig(n_cores=1, rt_core=0, throttle_budget=EXAMPLE_BUDGET, slowdown=NO_CONTENTION)
    return validate_scenario(Scenario(cfg, tuple(tasks), (), 4 * max(periods), SchedulerMode.CFS))


def random_throttle_scenario(rng, periods=200):
    """Random regulated system with random budget and demand rates: every
    best-effort core hosts one task that exhausts the budget and one that
    never does, next to a GPU task holding the lock for the whole run."""
    n_be = rng.randint(1, 3)
    budget = rng.randint(20_000, 200_000)
    cfg = SystemConfig(n_cores=n_be + 1, rt_core=0, throttle_budget=budget,
                       tfs_rho=Fraction(1), slowdown=NO_CONTENTION)
    be = []
    for core in range(1, n_be + 1):
        mem_rate = Fraction(budget) * Fraction(rng.randint(120, 800), 100)
        cpu_rate = Fraction(budget) * Fraction(rng.randint(0, 90), 100)
        be.append(BestEffortTaskSpec(f"mem{core}", Fraction(1), mem_rate, core))
        be.append(BestEffortTaskSpec(f"cpu{core}", Fraction(1), cpu_rate, core))
    rt = _locked_gpu_task(periods)
    return validate_scenario(Scenario(cfg, (rt,), tuple(be), Fraction(periods), SchedulerMode.CFS))


def random_scenarios(kind, count, seed):
    rng = random.Random(seed)
    gen = {"rt": random_rt_scenario, "throttle": random_throttle_scenario}[kind]
    return [gen(rng) for _ in range(count)]
