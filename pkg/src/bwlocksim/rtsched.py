"""Fixed-priority scheduling on the real-time core and the bandwidth-lock
system call with its priority-ceiling boost."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .model import RtTaskSpec


class LockProtocolError(AssertionError):
    """A lock transition the single-RT-core model rules out."""


@dataclass
class BwLockState:
    holder: str | None = None
    bwlock_val: int = 0
    saved_priority: int | None = None
    active_streams: set = field(default_factory=set)

    def check(self):
        if (self.bwlock_val == 1) != (self.holder is not None):
            raise LockProtocolError("bwlock_val and holder disagree")
        if (self.saved_priority is not None) != (self.holder is not None):
            raise LockProtocolError("saved priority without a holder")
        if self.active_streams and not self.bwlock_val:
            raise LockProtocolError("active streams while the lock is free")


@dataclass
class Job:
    task: RtTaskSpec
    index: int
    release: Fraction
    seg_index: int = 0
    seg_remaining: Fraction | None = None
    waiting: tuple | None = None  # what the job busy-waits on, see engine
    pending_release: bool = False
    gpu_items: list = field(default_factory=list)
    observed_C: Fraction = Fraction(0)
    observed_Gm: Fraction = Fraction(0)
    observed_Ge: Fraction = Fraction(0)
    finish: Fraction | None = None

    @property
    def name(self):
        return f"{self.task.id}#{self.index}"


@dataclass
class RtCoreState:
    ceiling_priority: int
    priority: dict = field(default_factory=dict)  # task id -> current rt priority
    ready: list = field(default_factory=list)
    running: Job | None = None
    lock: BwLockState = field(default_factory=BwLockState)

    @classmethod
    def for_tasks(cls, tasks, ceiling_priority):
        return cls(ceiling_priority, {t.id: t.priority for t in tasks})

    def is_rt_task(self, task_id):
        return task_id in self.priority


def sys_bwlock(caller, bw_val, state):
    """Acquire (``bw_val >= 1``) or release (``0``) the bandwidth lock for the
    task running on the real-time core.

    Calls from anything other than the running real-time task are ignored.
    Returns a short outcome string for the trace; ``state`` is updated in place.
    """
    running = state.running
    if running is None or running.task.id != caller:
        return "rejected:not-running-on-rt-core"
    if not state.is_rt_task(caller):
        return "rejected:not-rt-task"
    lock = state.lock
    if bw_val >= 1:
        if lock.holder == caller:
            return "rejected:already-held"
        if lock.holder is not None:
            raise LockProtocolError(f"{caller} acquires while {lock.holder} holds the lock")
        lock.holder = caller
        lock.bwlock_val = 1
        lock.saved_priority = state.priority[caller]
        state.priority[caller] = state.ceiling_priority
        return "acquire"
    if lock.holder != caller:
        return "rejected:not-holder"
    state.priority[caller] = lock.saved_priority
    lock.holder = None
    lock.bwlock_val = 0
    lock.saved_priority = None
    lock.active_streams.clear()
    return "release"


def _rank(state, job):
    # higher priority first, then FIFO by release, then task id
    return (-state.priority[job.task.id], job.release, job.task.id, job.index)


def rt_pick(state):
    """Job that should occupy the real-time core, or None for idle."""
    candidates = list(state.ready)
    if state.running is not None:
        candidates.append(state.running)
    if not candidates:
        return None
    best = min(candidates, key=lambda j: _rank(state, j))
    cur = state.running
    # equal effective priority never preempts the running job
    if cur is not None and best is not cur and state.priority[best.task.id] <= state.priority[cur.task.id]:
        return cur
    return best
