from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bwlocksim.engine import run
from bwlocksim.fairsched import RunQueue, SchedEntity, charge_runtime, lost_vruntime, pick_next, tfs_inflate
from bwlocksim.model import BestEffortTaskSpec, SchedulerMode
from bwlocksim.scenarios import tfs_synthetic


def ent(tid, v=0, w=1):
    return SchedEntity(BestEffortTaskSpec(tid, Fraction(w), Fraction(0), 1), vruntime=Fraction(v))


def test_charge_scales_by_weight():
    e = charge_runtime(ent("a", w=2), Fraction(1))
    assert (e.runtime, e.vruntime) == (1, Fraction(1, 2))


def test_inflation_after_a_throttled_period():
    # ran a third of the period, throttled for the rest, punished 3x
    e = ent("mem")
    charge_runtime(e, Fraction(1, 3))
    e.throttled_delta = Fraction(2, 3)
    tfs_inflate(e, 3)
    assert e.vruntime == Fraction(7, 3)
    assert round(float(e.vruntime), 2) == 2.33
    assert e.throttled_delta == 0 and e.lost_vruntime == 2


def test_rho_zero_is_cfs():
    e = ent("a", v=1)
    e.throttled_delta = Fraction(1, 2)
    tfs_inflate(e, 0)
    assert e.vruntime == 1 and e.throttled_delta == 0


def test_pick_min_vruntime_then_id():
    q = RunQueue()
    for e in (ent("b", 1), ent("a", 1), ent("c", 2)):
        q.enqueue(e)
    assert pick_next(q).id == "a"
    assert pick_next(RunQueue()) is None


def test_enqueue_lifts_to_queue_floor():
    q = RunQueue()
    q.enqueue(ent("a", 5))
    late = ent("b", 0)
    q.enqueue(late)
    assert late.vruntime == 5
    with pytest.raises(ValueError):
        q.enqueue(late)
    q.remove(late)
    assert len(q) == 1 and late not in q


@given(st.lists(st.fractions(0, 1), max_size=30), st.fractions(0, 5))
def test_lost_vruntime_matches_per_period_inflation(deltas, rho):
    e = ent("a")
    for d in deltas:
        e.throttled_delta = d
        tfs_inflate(e, rho)
    assert e.lost_vruntime == lost_vruntime(deltas, rho) == e.vruntime


@given(st.lists(st.tuples(st.sampled_from("abcde"), st.fractions(0, 10)), min_size=1, max_size=5,
                unique_by=lambda x: x[0]))
def test_pick_order_total(items):
    q = RunQueue()
    for tid, v in items:
        q.enqueue(ent(tid, v))
    order = [e.id for e in q]
    assert len(order) == len(set(order))
    assert pick_next(q).id == order[0]


def ran_per_period(metrics, task_id):
    """Periods in which the entity ran, read off its vruntime samples (V only
    grows by running or by punishment for a throttle it ran into)."""
    vs = [v for _, v in metrics.be_tasks[task_id]["vruntime_series"]]
    return [b > a for a, b in zip(vs, vs[1:])]


def test_cfs_favours_memory_intensive_task():
    _, m = run(tfs_synthetic(periods=200))
    ran = ran_per_period(m, "intense")[10:]
    assert all(sum(ran[i:i + 4]) >= 3 for i in range(len(ran) - 3))


def test_intense_share_non_increasing_in_rho():
    shares = []
    for rho in (0, Fraction(1, 2), 1, 2, 3, 5):
        _, m = run(tfs_synthetic(SchedulerMode.TFS, Fraction(rho), periods=300))
        shares.append(m.be_tasks["intense"]["scheduled_periods"])
    assert shares == sorted(shares, reverse=True)
    assert shares[-1] < shares[0]
