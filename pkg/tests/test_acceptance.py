"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly (``python tests/test_acceptance.py``) for just
the summary lines.
"""

import math
import os
import random
import subprocess
import sys
import time
from fractions import Fraction

sys.path.insert(0, os.path.dirname(__file__))

from bwlocksim import scenarios
from bwlocksim.analysis import response_time
from bwlocksim.engine import run
from bwlocksim.model import SchedulerMode, derived_wcet, render_scenario
from bwlocksim.shim import ACQUIRE, RELEASE, ApiEvent, ApiKind as A, StreamTracker, on_api_event

from oracles import response_scan, starvation_violations

TICK = Fraction(1, 100)  # tolerance: one tick


def close(a, b, tol=TICK):
    return abs(Fraction(a) - Fraction(b)) <= tol


def report(n, title, checks):
    """Print the criterion's verdict line and return whether it passed.

    ``checks`` is a list of ``(label, ok)`` pairs; failing labels are listed.
    """
    failed = [label for label, ok in checks if not ok]
    verdict = "PASS" if not failed else "FAIL"
    line = f"[{verdict}] criterion {n}: {title}"
    if failed:
        line += " -- failed: " + "; ".join(failed)
    print(line, flush=True)
    return not failed


def emit(capsys, fn):
    if capsys is None:
        return fn()
    with capsys.disabled():
        print()
        return fn()


# 1 --------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    trace, m = run(scenarios.builtin("fig4-cfs"))
    elapsed = time.perf_counter() - t0
    picks = [(r.time, r.task, r.detail) for r in trace if r.event == "be_pick"]
    pick_at_1 = [p for p in picks if p[0] == 1]
    throttles = [r.time for r in trace if r.event == "throttle"]
    window = m.throttle_time_in(1, 4)
    checks = [
        ("mem picked at t=1", [p[1] for p in pick_at_1] == ["mem"]),
        ("mem V=0 at t=1", pick_at_1 and close(Fraction(pick_at_1[0][2].split("=")[1]), 0)),
        ("cpu V=1 at t=1", close(m.vruntime_at("cpu", 1), 1)),
        ("throttles at 1.33, 2.33, 3.33", len(throttles) == 3 and all(
            close(t, e) for t, e in zip(throttles, (Fraction("1.33"), Fraction("2.33"), Fraction("3.33"))))),
        ("2.0 ms throttled in [1,4]", close(window, 2)),
        ("66.7% of the window", close(window / 3 * 100, Fraction("66.7"), Fraction(1, 10))),
        (f"runtime {elapsed:.3f}s < 1s", elapsed < 1),
    ]
    return report(1, f"fig4-cfs replay (throttle in [1,4] = {float(window):.3f} ms, {elapsed:.3f}s)", checks)


# 2 --------------------------------------------------------------------------


def criterion_2():
    trace, m = run(scenarios.builtin("fig4-tfs3"))
    picks = [(r.time, r.task) for r in trace if r.event == "be_pick"]
    v_mem = m.vruntime_at("mem", 2)
    in_window = [p for p in picks if 2 <= p[0] < 4]
    at_4 = [p[1] for p in picks if p[0] == 4]
    checks = [
        ("mem V=2.34 after boundary at t=2", close(v_mem, Fraction("2.34"))),
        ("cpu scheduled over [2,4)", in_window and in_window[0][0] == 2
         and {task for _, task in in_window} == {"cpu"}
         and not [r for r in trace if r.event == "throttle" and 2 <= r.time < 4]),
        ("cpu V=3 at t=4", close(m.vruntime_at("cpu", 4), 3)),
        ("mem re-picked at t=4", at_4 == ["mem"]),
    ]
    return report(2, f"fig4-tfs3 replay (mem V at 2 = {float(v_mem):.4f})", checks)


# 3 --------------------------------------------------------------------------


def criterion_3():
    t0 = time.perf_counter()
    shares = {}
    for label, mode, rho in (("cfs", SchedulerMode.CFS, 1), ("tfs1", SchedulerMode.TFS, 1),
                             ("tfs3", SchedulerMode.TFS, 3)):
        _, m = run(scenarios.tfs_synthetic(mode, rho, periods=1000))
        assert m.periods == 1000
        shares[label] = {t: m.be_tasks[t]["scheduled_periods"] / m.periods for t in ("intense", "mild")}
    elapsed = time.perf_counter() - t0
    checks = [
        ("cfs intense 75 +- 5 pp", abs(shares["cfs"]["intense"] - 0.75) <= 0.05),
        ("tfs1 intense 50 +- 5 pp", abs(shares["tfs1"]["intense"] - 0.50) <= 0.05),
        ("tfs3 mild > intense", shares["tfs3"]["mild"] > shares["tfs3"]["intense"]),
        (f"runtime {elapsed:.2f}s < 5s", elapsed < 5),
    ]
    summary = ", ".join(f"{k} intense {v['intense']:.1%}" for k, v in shares.items())
    return report(3, f"period shares over 1000 periods ({summary}, {elapsed:.2f}s)", checks)


# 4 --------------------------------------------------------------------------

N_THROTTLE = 100


def throttle_triplet(sc):
    out = []
    for mode, rho in ((SchedulerMode.CFS, 1), (SchedulerMode.TFS, 1), (SchedulerMode.TFS, 3)):
        out.append(run(sc.with_overrides(scheduler=mode, tfs_rho=Fraction(rho))).metrics.system_throttle_time)
    return out


def criterion_4():
    ordered = 0
    for sc in scenarios.random_scenarios("throttle", N_THROTTLE, seed=4):
        cfs, tfs1, tfs3 = throttle_triplet(sc)
        ordered += tfs3 <= tfs1 <= cfs
    cfs, tfs1, tfs3 = throttle_triplet(scenarios.builtin("tfs-sixcorun"))
    checks = [
        (f"ordering held in {ordered}/{N_THROTTLE}", ordered == N_THROTTLE),
        ("tfs-sixcorun ordered", tfs3 <= tfs1 <= cfs),
        ("tfs-sixcorun nonzero reduction", tfs1 < cfs and tfs3 < cfs),
    ]
    red1, red3 = 1 - tfs1 / cfs, 1 - tfs3 / cfs
    return report(4, f"throttle ordering on {ordered}/{N_THROTTLE} random scenarios; "
                     f"tfs-sixcorun reduction {float(red1):.0%} (rho=1), {float(red3):.0%} (rho=3)", checks)


# 5 --------------------------------------------------------------------------

N_SEQUENCES = 10_000


def _random_sequence(rng):
    events = []
    for _ in range(rng.randint(1, 40)):
        kind = rng.choice(list(A))
        stream = None
        if kind in (A.MEMCPY_ASYNC, A.STREAM_SYNC, A.CONFIGURE_CALL) or (kind is A.LAUNCH and rng.random() < 0.5):
            stream = rng.randint(0, 3)
        events.append(ApiEvent(kind, stream))
    return events


def _sequence_ok(events):
    tr = StreamTracker()
    balance = 0
    for ev in events:
        for action in on_api_event(ev, tr):
            balance += 1 if action is ACQUIRE else -1
            if balance not in (0, 1):
                return False
        if tr.lock_held != bool(tr.active) or balance != int(tr.lock_held):
            return False
    for action in on_api_event(ApiEvent(A.DEVICE_SYNC), tr):
        balance += 1 if action is ACQUIRE else -1
    return balance == 0 and not tr.lock_held and not tr.active


def _table_rows():
    def go(*evs):
        tr = StreamTracker()
        return tr, [on_api_event(e, tr) for e in evs]

    rows = []
    tr, acts = go(ApiEvent(A.CONFIGURE_CALL, 2))
    rows.append(("configure call", acts == [[]] and tr.pending_launch_stream == 2))
    tr, acts = go(ApiEvent(A.LAUNCH))
    rows.append(("launch", acts == [[ACQUIRE]] and tr.active == {0}))
    tr, acts = go(ApiEvent(A.MEMCPY))
    rows.append(("memcpy", acts == [[ACQUIRE, RELEASE]] and not tr.lock_held))
    tr, acts = go(ApiEvent(A.MEMCPY_ASYNC, 1))
    rows.append(("memcpy async", acts == [[ACQUIRE]] and tr.active == {1}))
    for k in (A.DEVICE_SYNC, A.THREAD_SYNC):
        tr, acts = go(ApiEvent(A.LAUNCH, 0), ApiEvent(A.LAUNCH, 1), ApiEvent(k))
        rows.append((k.value, acts[-1] == [RELEASE] and not tr.active))
    tr, acts = go(ApiEvent(A.LAUNCH, 0), ApiEvent(A.LAUNCH, 1), ApiEvent(A.STREAM_SYNC, 0))
    rows.append(("stream sync, other stream active", acts[-1] == [] and tr.lock_held and tr.active == {1}))
    acts = on_api_event(ApiEvent(A.STREAM_SYNC, 1), tr)
    rows.append(("stream sync, last stream", acts == [RELEASE] and not tr.lock_held))
    return rows


def criterion_5():
    rng = random.Random(5)
    good = sum(_sequence_ok(_random_sequence(rng)) for _ in range(N_SEQUENCES))
    rows = _table_rows()
    checks = [(f"{good}/{N_SEQUENCES} sequences", good == N_SEQUENCES)] + [(f"row {r}", ok) for r, ok in rows]
    return report(5, f"lock state machine: {good}/{N_SEQUENCES} random sequences, "
                     f"{sum(ok for _, ok in rows)}/{len(rows)} table rows", checks)


# 6 --------------------------------------------------------------------------

N_TASKSETS = 200


def criterion_6():
    sound = oracle_ok = top_ok = top_exact = no_block = bounded = 0
    for sc in scenarios.random_scenarios("rt", N_TASKSETS, seed=6):
        tasks = sc.rt_tasks
        res = response_time(tasks)
        oracle_ok += {v.task_id: v.response for v in res.tasks} == response_scan(tasks)
        _, m = run(sc)
        ok = True
        for v in res.tasks:
            rs = m.rt_tasks[v.task_id]["response_times"]
            if v.response is not None:
                bounded += 1
                ok = ok and all(r <= v.response for r in rs)
        sound += ok
        # synchronous release: the top task starts first, so it sees R minus blocking
        top = max(tasks, key=lambda t: t.priority)  # priorities are distinct
        v = res[top.id]
        first = m.rt_tasks[top.id]["response_times"][0]
        top_ok += first == derived_wcet(top).E == v.response - v.blocking
        if v.blocking == 0:
            no_block += 1
            top_exact += first == v.response
    checks = [
        (f"sim <= analysis in {sound}/{N_TASKSETS}", sound == N_TASKSETS),
        (f"oracle agreement {oracle_ok}/{N_TASKSETS}", oracle_ok == N_TASKSETS),
        (f"top task equality {top_ok}/{N_TASKSETS}", top_ok == N_TASKSETS),
        (f"top task hits R when unblocked {top_exact}/{no_block}", top_exact == no_block),
    ]
    return report(6, f"sim-analysis soundness on {N_TASKSETS} tasksets ({bounded} bounded tasks; "
                     f"top task first job = R - B everywhere, = R in {top_exact} unblocked sets)", checks)


# 7 --------------------------------------------------------------------------


def starvation_runs():
    yield from (scenarios.builtin(n) for n in ("fig4-cfs", "fig4-tfs3", "fig4-ideal", "tfs-sixcorun"))
    for mode, rho in ((SchedulerMode.CFS, 1), (SchedulerMode.TFS, 1), (SchedulerMode.TFS, 3)):
        yield scenarios.tfs_synthetic(mode, rho, periods=300)
    for sc in scenarios.random_scenarios("throttle", 30, seed=7):
        for mode, rho in ((SchedulerMode.CFS, 1), (SchedulerMode.TFS, Fraction(1, 2)), (SchedulerMode.TFS, 3)):
            yield sc.with_overrides(scheduler=mode, tfs_rho=Fraction(rho), sim_duration=Fraction(100))


def literal_window_misses(sc, m):
    """Windows of ceil(gap / T) + 2 periods in which an entity gained nothing."""
    T = sc.config.regulation_period
    misses = 0
    by_core = {}
    for t in sc.be_tasks:
        by_core.setdefault(t.core, []).append(t.id)
    for ids in by_core.values():
        series = {i: dict(m.be_tasks[i]["vruntime_series"]) for i in ids}
        times = sorted(set.intersection(*(set(s) for s in series.values())))
        for k, t0 in enumerate(times):
            vs = [series[i][t0] for i in ids]
            window = math.ceil((max(vs) - min(vs)) / T + 2)
            if k + window < len(times):
                misses += sum(series[i][times[k + window]] == series[i][t0] for i in ids)
    return misses


def criterion_7():
    runs = bad = literal = 0
    for sc in starvation_runs():
        _, m = run(sc)
        runs += 1
        bad += bool(starvation_violations(sc, m))
        literal += literal_window_misses(sc, m)
    checks = [(f"{bad}/{runs} runs starved an entity", bad == 0)]
    return report(7, f"starvation freedom over {runs} runs (per-entity growth window); "
                     f"gap/T+2 window missed {literal} times", checks)


# 8 --------------------------------------------------------------------------


def _cli_run(path, out, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "bwlocksim", "simulate", path, "--out", out],
                   check=True, env=env, capture_output=True)
    with open(os.path.join(out, "trace.csv"), "rb") as a, open(os.path.join(out, "metrics.json"), "rb") as b:
        return a.read(), b.read()


def criterion_8(tmp):
    in_process = 0
    cases = [scenarios.builtin(n) for n in sorted(scenarios.BUILTIN)]
    cases += scenarios.random_scenarios("rt", 10, seed=8)
    cases += [s.with_overrides(sim_duration=Fraction(50)) for s in scenarios.random_scenarios("throttle", 10, seed=8)]
    for sc in cases:
        a, b = run(sc), run(sc)
        in_process += (a.trace.to_csv() == b.trace.to_csv() and a.metrics.to_json() == b.metrics.to_json())
    cross = 0
    names = ("fig4-tfs3", "corun", "tfs-sixcorun")
    for name in names:
        sc = scenarios.builtin(name)
        if name != "fig4-tfs3":
            sc = sc.with_overrides(sim_duration=Fraction(60))
        path = os.path.join(tmp, f"{name}.json")
        with open(path, "w") as fh:
            fh.write(render_scenario(sc))
        first = _cli_run(path, os.path.join(tmp, name, "1"), 1)
        second = _cli_run(path, os.path.join(tmp, name, "2"), 987)
        cross += first == second
    checks = [
        (f"in-process {in_process}/{len(cases)}", in_process == len(cases)),
        (f"separate processes {cross}/{len(names)}", cross == len(names)),
    ]
    return report(8, f"determinism: {in_process}/{len(cases)} repeated runs and {cross}/{len(names)} "
                     "cross-process CLI runs byte-identical", checks)


# pytest entry points --------------------------------------------------------


def test_criterion_1_fig4_cfs(capsys):
    assert emit(capsys, criterion_1)


def test_criterion_2_fig4_tfs3(capsys):
    assert emit(capsys, criterion_2)


def test_criterion_3_period_shares(capsys):
    assert emit(capsys, criterion_3)


def test_criterion_4_throttle_ordering(capsys):
    assert emit(capsys, criterion_4)


def test_criterion_5_lock_state_machine(capsys):
    assert emit(capsys, criterion_5)


def test_criterion_6_sim_analysis_soundness(capsys):
    assert emit(capsys, criterion_6)


def test_criterion_7_starvation_freedom(capsys):
    assert emit(capsys, criterion_7)


def test_criterion_8_determinism(capsys, tmp_path):
    assert emit(capsys, lambda: criterion_8(str(tmp_path)))


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                   criterion_6(), criterion_7(), criterion_8(d)]
    sys.exit(0 if all(results) else 1)
