"""Fixed-priority response-time analysis for the real-time core, with
blocking from lower-priority bandwidth-lock holders."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .model import derived_wcet, num
from .shim import lock_intervals


@dataclass(frozen=True)
class TaskVerdict:
    task_id: str
    wcet: Fraction
    blocking: Fraction
    response: Fraction | None  # None when the iteration passed the period

    @property
    def schedulable(self):
        return self.response is not None


@dataclass(frozen=True)
class AnalysisResult:
    tasks: tuple

    @property
    def schedulable(self):
        return all(v.schedulable for v in self.tasks)

    def __getitem__(self, task_id):
        for v in self.tasks:
            if v.task_id == task_id:
                return v
        raise KeyError(task_id)

    def to_dict(self):
        return {
            "schedulable": self.schedulable,
            "tasks": [
                {"id": v.task_id, "E_ms": num(v.wcet), "B_ms": num(v.blocking),
                 "R_ms": None if v.response is None else num(v.response),
                 "divergent": v.response is None, "schedulable": v.schedulable}
                for v in self.tasks
            ],
        }


def priority_order(tasks):
    """Highest priority first; equal priorities resolved by task id."""
    return sorted(tasks, key=lambda t: (-t.priority, t.id))


def blocking_term(tasks, i):
    """Longest lock-held interval of any task ranked below ``tasks[i]``."""
    ordered = priority_order(tasks)
    rank = ordered.index(tasks[i])
    longest = Fraction(0)
    for t in ordered[rank + 1:]:
        longest = max([longest, *lock_intervals(t.segments)])
    return longest


def response_time(tasks, wcet=None):
    """Iterate ``R = E_i + B_i + sum_{j in hp(i)} ceil(R / P_j) * E_j`` to its
    fixed point for every task.

    ``wcet`` optionally maps task id to the execution time to use instead of
    the nominal segment sum (e.g. a measured, lock-protected value).
    """
    tasks = list(tasks)
    if not tasks:
        return AnalysisResult(())
    E = {t.id: Fraction(wcet[t.id]) if wcet and t.id in wcet else derived_wcet(t).E for t in tasks}
    ordered = priority_order(tasks)
    verdicts = {}
    for rank, t in enumerate(ordered):
        hp = ordered[:rank]
        B = blocking_term(tasks, tasks.index(t))
        R = E[t.id] + B
        while R <= t.period:
            nxt = E[t.id] + B + sum((math.ceil(R / j.period) * E[j.id] for j in hp), Fraction(0))
            if nxt == R:
                break
            R = nxt
        verdicts[t.id] = TaskVerdict(t.id, E[t.id], B, R if R <= t.period else None)
    return AnalysisResult(tuple(verdicts[t.id] for t in tasks))


def analyze_scenario(scenario):
    """Verdict document for a scenario's RT tasks; best-effort tasks are ignored."""
    result = response_time(scenario.rt_tasks)
    doc = result.to_dict()
    doc["overfull"] = scenario.overfull_tasks
    return doc
