"""Deterministic discrete-event simulation of one real-time core, a GPU and
any number of regulated best-effort cores.

Time is exact rational milliseconds. The only rounding happens on the GPU:
whenever its slowdown factor changes while it runs below nominal speed, the
remaining work and the completion instant are rounded *up* to a 1 ns grid.
That keeps denominators bounded and never makes observed GPU time shorter
than nominal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from . import shim
from .contention import gpu_slowdown_factor
from .fairsched import RunQueue, SchedEntity, charge_runtime, pick_next
from .model import FORMAT_VERSION, GPU_KINDS, SegmentKind, derived_wcet, num
from .regulator import CoreRegulatorState, close_throttle, on_budget_exhausted, on_period_begin
from .rtsched import Job, LockProtocolError, RtCoreState, rt_pick, sys_bwlock

GPU_QUANTUM = Fraction(1, 1_000_000)  # 1 ns in ms
DEFAULT_MAX_EVENTS = 5_000_000


class SimulationGuardError(RuntimeError):
    """The event loop exceeded its step budget."""


def _ceil_grid(x, q=GPU_QUANTUM):
    return math.ceil(x / q) * q


def _fmt(x):
    return f"{float(x):.6f}"


class TraceRecord(NamedTuple):
    time: Fraction
    core: str
    event: str
    task: str
    detail: str


class SimTrace:
    HEADER = ("time_us", "core", "event", "task", "detail")

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def add(self, time, core, event, task="", detail=""):
        self.records.append(TraceRecord(time, "" if core is None else str(core), event, task, detail))

    def events(self, name):
        return [r for r in self.records if r.event == name]

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.records:
            w.writerow((f"{float(r.time * 1000):.3f}", r.core, r.event, r.task, r.detail))
        return buf.getvalue()


@dataclass
class Metrics:
    scheduler: str
    rho: Fraction
    sim_duration: Fraction
    periods: int = 0
    be_tasks: dict = field(default_factory=dict)
    rt_tasks: dict = field(default_factory=dict)
    cores: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def system_throttle_time(self):
        return sum((c["throttle_time"] for c in self.cores.values()), Fraction(0))

    def throttle_time_in(self, start, end):
        """System throttle time falling inside ``[start, end]``."""
        total = Fraction(0)
        for c in self.cores.values():
            for a, b in c["throttle_intervals"]:
                lo, hi = max(a, start), min(b, end)
                if hi > lo:
                    total += hi - lo
        return total

    def vruntime_at(self, task_id, t):
        for when, v in self.be_tasks[task_id]["vruntime_series"]:
            if when == t:
                return v
        raise KeyError(f"no vruntime sample for {task_id} at {t}")

    def gpu_slowdown(self, task_id=None):
        """Mean observed/nominal execution time over completed jobs."""
        ids = [task_id] if task_id else sorted(self.rt_tasks)
        ratios = []
        for tid in ids:
            rt = self.rt_tasks[tid]
            if rt["nominal"]["E"] > 0:
                ratios += [job["E"] / rt["nominal"]["E"] for job in rt["observed"]]
        if not ratios:
            return None
        return sum(ratios, Fraction(0)) / len(ratios)

    def to_dict(self):
        def wcet(d):
            return {k: num(v) for k, v in d.items()}

        return {
            "format_version": FORMAT_VERSION,
            "scheduler": self.scheduler,
            "rho": num(self.rho),
            "sim_duration_ms": num(self.sim_duration),
            "periods": self.periods,
            "system": {
                "total_throttle_time_ms": num(self.system_throttle_time),
                "gpu_slowdown": None if self.gpu_slowdown() is None else float(self.gpu_slowdown()),
            },
            "cores": {
                str(c): {
                    "total_throttle_time_ms": num(d["throttle_time"]),
                    "throttle_count": d["throttle_count"],
                    "regulated_periods": d["regulated_periods"],
                    "busy_time_ms": num(d["busy_time"]),
                    "idle_time_ms": num(d["idle_time"]),
                    "throttle_intervals_ms": [[num(a), num(b)] for a, b in d["throttle_intervals"]],
                }
                for c, d in sorted(self.cores.items())
            },
            "be_tasks": {
                tid: {
                    "core": d["core"],
                    "runtime_ms": num(d["runtime"]),
                    "vruntime_ms": num(d["vruntime"]),
                    "scheduled_periods": d["scheduled_periods"],
                    "total_throttle_time_ms": num(d["total_throttle_time"]),
                    "lost_vruntime_ms": num(d["lost_vruntime"]),
                    "finished_at_ms": None if d["finished_at"] is None else num(d["finished_at"]),
                    "vruntime_series": [[num(t), num(v)] for t, v in d["vruntime_series"]],
                }
                for tid, d in sorted(self.be_tasks.items())
            },
            "rt_tasks": {
                tid: {
                    "period_ms": num(d["period"]),
                    "nominal": wcet(d["nominal"]),
                    "observed": [wcet(o) for o in d["observed"]],
                    "response_times_ms": [num(r) for r in d["response_times"]],
                    "max_response_ms": None if not d["response_times"] else num(max(d["response_times"])),
                    "deadline_misses": d["deadline_misses"],
                    "incomplete_jobs": d["incomplete_jobs"],
                    "overfull": d["overfull"],
                }
                for tid, d in sorted(self.rt_tasks.items())
            },
            "warnings": list(self.warnings),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class ResponseTimes(NamedTuple):
    per_job: list
    max: Fraction | None
    deadline_misses: int


def observed_response_time(metrics, task_id):
    d = metrics.rt_tasks[task_id]
    rs = d["response_times"]
    return ResponseTimes(list(rs), max(rs) if rs else None, d["deadline_misses"])


class SimResult(NamedTuple):
    trace: SimTrace
    metrics: Metrics


@dataclass
class GpuItem:
    job: Job
    kind: SegmentKind
    stream: int | None
    remaining: Fraction  # nominal work left as of ``anchor``
    started: Fraction | None = None
    anchor: Fraction | None = None
    factor: Fraction | None = None
    eta: Fraction | None = None
    done: bool = False


@dataclass
class _Core:
    reg: CoreRegulatorState
    queue: RunQueue
    consumed: Fraction = Fraction(0)
    ran: set = field(default_factory=set)


class Simulator:
    def __init__(self, scenario, max_events=DEFAULT_MAX_EVENTS):
        self.sc = scenario
        self.cfg = scenario.config
        self.rho = scenario.rho
        self.max_events = max_events
        self.T = self.cfg.regulation_period
        self.end = scenario.sim_duration
        self.trace = SimTrace()
        self.now = Fraction(0)
        self.next_boundary = Fraction(0)

        self.metrics = Metrics(scenario.scheduler.value, self.rho, self.end)
        for w in scenario.overfull_tasks:
            self.metrics.warnings.append(f"rt task {w} demands more than its period")

        self.cores = {}
        for c in self.cfg.be_cores:
            self.cores[c] = _Core(CoreRegulatorState(c), RunQueue())
            self.metrics.cores[c] = {
                "throttle_time": Fraction(0), "throttle_count": 0, "regulated_periods": 0,
                "busy_time": Fraction(0), "idle_time": Fraction(0), "throttle_intervals": [],
            }
        self.entities = {}
        self.work_left = {}
        for t in sorted(scenario.be_tasks, key=lambda t: t.id):
            ent = SchedEntity(t, vruntime=t.initial_vruntime)
            self.cores[t.core].queue.enqueue(ent)
            self.entities[t.id] = ent
            self.work_left[t.id] = t.work
            self.metrics.be_tasks[t.id] = {
                "core": t.core, "runtime": Fraction(0), "vruntime": ent.vruntime, "scheduled_periods": 0,
                "total_throttle_time": Fraction(0), "lost_vruntime": Fraction(0), "finished_at": None,
                "vruntime_series": [],
            }

        self.rt = RtCoreState.for_tasks(scenario.rt_tasks, self.cfg.ceiling_priority)
        self.rt_specs = {t.id: t for t in scenario.rt_tasks}
        self.trackers = {t.id: shim.StreamTracker() for t in scenario.rt_tasks}
        self.next_release = {t.id: Fraction(0) for t in scenario.rt_tasks}
        self.job_count = {t.id: 0 for t in scenario.rt_tasks}
        self.live_jobs = []
        self.gpu = deque()
        overfull = set(scenario.overfull_tasks)
        for t in scenario.rt_tasks:
            self.metrics.rt_tasks[t.id] = {
                "period": t.period, "nominal": derived_wcet(t)._asdict(), "observed": [],
                "response_times": [], "deadline_misses": 0, "incomplete_jobs": 0, "overfull": t.id in overfull,
            }

    # -- main loop ------------------------------------------------------------

    def run(self):
        steps = 0
        while True:
            steps += 1
            if steps > self.max_events:
                raise SimulationGuardError(
                    f"more than {self.max_events} event steps before t={float(self.now)} ms; "
                    "check for zero-length segments or an enormous horizon")
            t = self._next_event_time()
            self._advance(t)
            if self.now >= self.end:
                self._finish()
                return SimResult(self.trace, self.metrics)
            self._process()

    def _next_event_time(self):
        cands = [self.end, self.next_boundary]
        cands += self.next_release.values()
        for core in self.cores.values():
            ent = core.reg.current_entity
            if ent is None or core.reg.throttled:
                continue
            rate = ent.task.demand_rate
            if core.reg.regulated and rate > 0:
                cands.append(self.now + core.reg.remaining_budget / rate)
            left = self.work_left[ent.id]
            if left is not None:
                cands.append(self.now + left)
        job = self.rt.running
        if job is not None and job.seg_remaining is not None and job.waiting is None:
            cands.append(self.now + job.seg_remaining)
        if self.gpu:
            self._gpu_retarget()
            cands.append(self.gpu[0].eta)
        return min(cands)

    def _gpu_retarget(self):
        """Re-anchor the running GPU item if its progress rate changed."""
        head = self.gpu[0]
        factor = self._factor()
        if head.factor == factor:
            return
        if head.factor is not None:
            left = head.remaining - (self.now - head.anchor) / head.factor
            if head.factor != 1:
                left = _ceil_grid(left)
            head.remaining = max(left, Fraction(0))
        head.anchor = self.now
        head.factor = factor
        if factor == 1:
            head.eta = self.now + head.remaining
        else:
            head.eta = _ceil_grid(self.now + head.remaining * factor)

    def _aggregate_bw(self):
        u = Fraction(0)
        for core in self.cores.values():
            ent = core.reg.current_entity
            if ent is not None and not core.reg.throttled:
                u += ent.task.demand_rate
        return u

    def _factor(self):
        return Fraction(gpu_slowdown_factor(self._aggregate_bw(), self.cfg.slowdown))

    def _advance(self, t):
        dt = t - self.now
        if dt < 0:
            raise AssertionError("time went backwards")
        if dt == 0:
            return
        for c, core in self.cores.items():
            reg = core.reg
            cm = self.metrics.cores[c]
            ent = reg.current_entity
            if ent is None:
                cm["idle_time"] += dt
                continue
            if reg.throttled:
                continue
            cm["busy_time"] += dt
            charge_runtime(ent, dt)
            used = ent.task.demand_rate * dt
            if reg.regulated and used > reg.remaining_budget:
                raise AssertionError(f"core {c} overran its budget")
            reg.remaining_budget -= min(used, reg.remaining_budget)
            core.consumed += used
            core.ran.add(ent.id)
            if self.work_left[ent.id] is not None:
                self.work_left[ent.id] -= dt
        job = self.rt.running
        if job is not None and job.seg_remaining is not None and job.waiting is None:
            job.seg_remaining -= dt
            job.observed_C += dt
        self.now = t

    def _process(self):
        # simultaneous events, in order: period begin, job release,
        # budget exhaustion, segment completion
        now = self.now
        pick_cores = set()
        if now == self.next_boundary:
            self._period_begin()
            pick_cores.update(self.cores)
        for tid in sorted(self.next_release):
            if self.next_release[tid] == now:
                self._release(tid)
        for c, core in sorted(self.cores.items()):
            reg = core.reg
            if reg.current_entity is not None and not reg.throttled and reg.regulated \
                    and reg.remaining_budget == 0 and reg.current_entity.task.demand_rate > 0:
                on_budget_exhausted(reg, now)
                self.metrics.cores[c]["throttle_count"] += 1
                self.trace.add(now, c, "throttle", reg.current_entity.id,
                               f"vruntime={_fmt(reg.current_entity.vruntime)}")
        # segment completions
        if self.gpu and self.gpu[0].eta == now:
            self._gpu_done()
        for c, core in sorted(self.cores.items()):
            ent = core.reg.current_entity
            if ent is not None and ent in core.queue and self.work_left[ent.id] == 0:
                core.queue.remove(ent)
                self.metrics.be_tasks[ent.id]["finished_at"] = now
                self.trace.add(now, c, "be_done", ent.id)
                if not core.reg.throttled:
                    # a throttled finisher stays current until the period
                    # boundary so its throttled span is still charged to it
                    core.reg.current_entity = None
                    pick_cores.add(c)
        for c in sorted(pick_cores):
            self._be_pick(c)
        self._rt_settle()
        self.rt.lock.check()

    def _finish(self):
        now = self.now
        if now == self.next_boundary:
            self._close_periods()
        else:
            # truncated final period
            for c, core in sorted(self.cores.items()):
                if core.reg.throttled:
                    self._unthrottle(c, "sim_end")
            self._count_periods()
        for job in self.live_jobs:
            d = self.metrics.rt_tasks[job.task.id]
            d["incomplete_jobs"] += 1
            if now - job.release > job.task.period:
                d["deadline_misses"] += 1
        for tid, ent in self.entities.items():
            d = self.metrics.be_tasks[tid]
            d["runtime"] = ent.runtime
            d["vruntime"] = ent.vruntime
            d["total_throttle_time"] = ent.total_throttled
            d["lost_vruntime"] = ent.lost_vruntime
        self.trace.add(now, None, "sim_end")

    # -- best-effort side -----------------------------------------------------

    def _unthrottle(self, c, why=""):
        reg = self.cores[c].reg
        ent = reg.current_entity
        start = ent.throttle_start
        delta = close_throttle(reg, self.now, self.rho)
        cm = self.metrics.cores[c]
        cm["throttle_time"] += delta
        cm["throttle_intervals"].append((start, self.now))
        detail = f"delta={_fmt(delta)};vruntime={_fmt(ent.vruntime)}"
        self.trace.add(self.now, c, "unthrottle", ent.id, detail + (f";{why}" if why else ""))

    def _count_periods(self):
        for core in self.cores.values():
            for tid in core.ran:
                self.metrics.be_tasks[tid]["scheduled_periods"] += 1
            core.ran = set()
        self.metrics.periods += 1

    def _close_periods(self):
        """Bookkeeping for the period ending at ``now``."""
        if self.now == 0:
            return
        for c, core in sorted(self.cores.items()):
            reg = core.reg
            if reg.regulated and core.consumed > reg.budget:
                raise AssertionError(f"core {c} consumed {core.consumed} > budget {reg.budget}")
            if reg.throttled:
                self._unthrottle(c)
            core.consumed = Fraction(0)
        self._count_periods()

    def _period_begin(self):
        self._close_periods()
        for c, core in sorted(self.cores.items()):
            reg = core.reg
            on_period_begin(reg, self.rt.lock, self.cfg, self.now, self.rho)
            if reg.regulated:
                self.metrics.cores[c]["regulated_periods"] += 1
            self.trace.add(self.now, c, "period_begin", "",
                           f"budget={num(reg.budget)};regulated={int(reg.regulated)}")
            for ent in core.queue:
                self.metrics.be_tasks[ent.id]["vruntime_series"].append((self.now, ent.vruntime))
        self.next_boundary += self.T

    def _be_pick(self, c):
        core = self.cores[c]
        if core.reg.throttled:
            return
        ent = pick_next(core.queue)
        core.reg.current_entity = ent
        if ent is not None:
            self.trace.add(self.now, c, "be_pick", ent.id, f"vruntime={_fmt(ent.vruntime)}")

    # -- real-time side -------------------------------------------------------

    def _release(self, tid):
        task = self.rt_specs[tid]
        idx = self.job_count[tid]
        self.job_count[tid] += 1
        job = Job(task, idx, self.now)
        self.live_jobs.append(job)
        self.rt.ready.append(job)
        self.next_release[tid] = self.now + task.period
        self.trace.add(self.now, self.cfg.rt_core, "job_release", job.name)

    def _rt_settle(self):
        rt = self.rt
        while True:
            yielded = False
            if rt.running is not None:
                yielded = self._run_zero_time(rt.running)
            choice = rt_pick(rt)
            if choice is rt.running:
                if yielded:
                    continue
                return
            cur = rt.running
            if cur is not None:
                if rt.lock.holder == cur.task.id:
                    raise LockProtocolError(f"lock holder {cur.name} preempted")
                rt.ready.append(cur)
                self.trace.add(self.now, self.cfg.rt_core, "rt_preempt", cur.name, f"by={choice.name}")
            rt.ready.remove(choice)
            rt.running = choice
            self.trace.add(self.now, self.cfg.rt_core, "rt_dispatch", choice.name,
                           f"priority={rt.priority[choice.task.id]}")

    def _apply_api(self, job, event):
        tracker = self.trackers[job.task.id]
        before = set(tracker.active)
        n_warn = len(tracker.warnings)
        self.trace.add(self.now, self.cfg.rt_core, "api_call", job.name,
                       f"{event.kind.value}" + ("" if event.stream is None else f";stream={event.stream}"))
        actions = shim.on_api_event(event, tracker)
        for w in tracker.warnings[n_warn:]:
            self.trace.add(self.now, self.cfg.rt_core, "shim_warning", job.name, w)
        for s in sorted(tracker.active - before):
            self.trace.add(self.now, "gpu", "stream_activate", job.name, f"stream={s}")
        for s in sorted(before - tracker.active):
            self.trace.add(self.now, "gpu", "stream_retire", job.name, f"stream={s}")
        return actions

    def _lock(self, job, action):
        tid = job.task.id
        old = self.rt.priority[tid]
        outcome = sys_bwlock(tid, 1 if action is shim.ACQUIRE else 0, self.rt)
        core = self.cfg.rt_core
        if outcome == "acquire":
            self.trace.add(self.now, core, "bwlock_acquire", job.name)
            self.trace.add(self.now, core, "prio_boost", job.name, f"{old}->{self.rt.priority[tid]}")
        elif outcome == "release":
            self.trace.add(self.now, core, "bwlock_release", job.name)
            self.trace.add(self.now, core, "prio_restore", job.name, f"{old}->{self.rt.priority[tid]}")
        else:
            self.trace.add(self.now, core, "bwlock_rejected", job.name, outcome.split(":", 1)[1])
        self.rt.lock.active_streams = set(self.trackers[tid].active) if self.rt.lock.holder else set()

    def _submit(self, job, seg):
        item = GpuItem(job, seg.kind, seg.stream, seg.duration)
        job.gpu_items.append(item)
        self.gpu.append(item)
        if len(self.gpu) == 1:
            self._gpu_start()
        return item

    def _gpu_start(self):
        head = self.gpu[0]
        head.started = self.now
        self.trace.add(self.now, "gpu", "gpu_start", head.job.name,
                       f"{head.kind.value}" + ("" if head.stream is None else f";stream={head.stream}"))

    def _gpu_done(self):
        item = self.gpu.popleft()
        item.done = True
        took = self.now - item.started
        if item.kind is SegmentKind.SYNC_COPY:
            item.job.observed_Gm += took
        else:
            item.job.observed_Ge += took
        self.trace.add(self.now, "gpu", "gpu_done", item.job.name, f"took={_fmt(took)}")
        if self.gpu:
            self._gpu_start()

    def _wait_satisfied(self, job):
        what = job.waiting[0]
        if what == "item":
            return job.waiting[1].done
        if what == "stream":
            s = job.waiting[1]
            return all(i.done for i in job.gpu_items if i.stream == s)
        return all(i.done for i in job.gpu_items)  # drain

    def _run_zero_time(self, job):
        """Step ``job`` through everything that takes no time right now.

        Returns True when the job gave up the lock (its priority dropped) and
        the dispatcher must look again before it continues. A job whose
        program ends with the release completes at that same instant.
        """
        segs = job.task.segments
        while True:
            if job.waiting is not None:
                if not self._wait_satisfied(job):
                    return False
                what, _, event = job.waiting
                job.waiting = None
                released = False
                if what == "item":
                    if job.pending_release:
                        job.pending_release = False
                        self._lock(job, shim.RELEASE)
                        released = True
                else:
                    for a in self._apply_api(job, event):
                        self._lock(job, a)
                        released = released or a is shim.RELEASE
                if what == "final":
                    self._complete(job)
                    return True
                job.seg_index += 1
                if released and job.seg_index < len(segs):
                    return True
                continue
            if job.seg_index >= len(segs):
                if self.trackers[job.task.id].lock_held or not all(i.done for i in job.gpu_items):
                    self.trace.add(self.now, self.cfg.rt_core, "dangling_lock", job.name,
                                   "program ended with active streams; draining")
                    self.metrics.warnings.append(f"{job.name} ended holding the bandwidth lock")
                    job.waiting = ("final", None, shim.ApiEvent(shim.ApiKind.DEVICE_SYNC))
                    continue
                self._complete(job)
                return True
            seg = segs[job.seg_index]
            kind = seg.kind
            if kind is SegmentKind.COMPUTE:
                if job.seg_remaining is None:
                    job.seg_remaining = seg.duration
                if job.seg_remaining > 0:
                    return False
                job.seg_remaining = None
                job.seg_index += 1
            elif kind is SegmentKind.SYNC_COPY:
                (event,) = shim.api_events_for(seg)
                actions = self._apply_api(job, event)
                if shim.ACQUIRE in actions:
                    self._lock(job, shim.ACQUIRE)
                job.pending_release = shim.RELEASE in actions
                job.waiting = ("item", self._submit(job, seg), None)
            elif kind in (SegmentKind.DEVICE_SYNC, SegmentKind.THREAD_SYNC):
                (event,) = shim.api_events_for(seg)
                job.waiting = ("drain", None, event)
            elif kind is SegmentKind.STREAM_SYNC:
                (event,) = shim.api_events_for(seg)
                job.waiting = ("stream", seg.stream, event)
            else:
                for event in shim.api_events_for(seg):
                    for a in self._apply_api(job, event):
                        self._lock(job, a)
                if kind in GPU_KINDS:
                    self._submit(job, seg)
                job.seg_index += 1

    def _complete(self, job):
        rt = self.rt
        assert rt.running is job
        rt.running = None
        self.live_jobs.remove(job)
        job.finish = self.now
        response = self.now - job.release
        d = self.metrics.rt_tasks[job.task.id]
        d["response_times"].append(response)
        d["observed"].append({
            "C": job.observed_C, "Gm": job.observed_Gm, "Ge": job.observed_Ge,
            "E": job.observed_C + job.observed_Gm + job.observed_Ge,
        })
        if response > job.task.period:
            d["deadline_misses"] += 1
        self.trace.add(self.now, self.cfg.rt_core, "job_complete", job.name, f"response={_fmt(response)}")


def run(scenario, max_events=DEFAULT_MAX_EVENTS):
    """Simulate ``scenario`` over ``[0, sim_duration]``; returns ``(trace, metrics)``."""
    return Simulator(scenario, max_events).run()
