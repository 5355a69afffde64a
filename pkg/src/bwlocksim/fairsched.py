"""Virtual-runtime fair scheduling for best-effort cores, with the throttle-aware
vruntime inflation used by TFS."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import BestEffortTaskSpec


@dataclass
class SchedEntity:
    task: BestEffortTaskSpec
    vruntime: Fraction = Fraction(0)
    runtime: Fraction = Fraction(0)
    throttled_delta: Fraction = Fraction(0)  # throttled time in the current period
    throttle_start: Fraction | None = None
    total_throttled: Fraction = Fraction(0)
    lost_vruntime: Fraction = Fraction(0)

    @property
    def id(self):
        return self.task.id

    @property
    def sort_key(self):
        return (self.vruntime, self.task.id)


def charge_runtime(entity, ran):
    """Account ``ran`` ms of execution: vruntime grows by ran / weight."""
    if ran:
        entity.runtime += ran
        entity.vruntime += ran / entity.task.weight
    return entity


def tfs_inflate(entity, rho):
    """Add the period's throttled time, scaled by ``rho``, to the entity's
    vruntime and clear the per-period throttle accumulator.

    ``rho == 0`` is plain CFS: the accumulator is still cleared.
    """
    penalty = entity.throttled_delta * rho
    entity.vruntime += penalty
    entity.lost_vruntime += penalty
    entity.throttled_delta = Fraction(0)
    return entity


def lost_vruntime(deltas, rho):
    return sum(deltas, Fraction(0)) * rho


class RunQueue:
    """Runnable entities of one core, ordered by ``(vruntime, task id)``."""

    def __init__(self):
        self._entities = {}

    def __len__(self):
        return len(self._entities)

    def __iter__(self):
        return iter(sorted(self._entities.values(), key=lambda e: e.sort_key))

    def __contains__(self, entity):
        return entity.id in self._entities

    def min_vruntime(self):
        return min((e.vruntime for e in self._entities.values()), default=None)

    def enqueue(self, entity):
        """Add an entity, lifting its vruntime to the queue minimum so a
        newcomer cannot monopolize the core."""
        if entity.id in self._entities:
            raise ValueError(f"entity {entity.id!r} already queued")
        floor = self.min_vruntime()
        if floor is not None and entity.vruntime < floor:
            entity.vruntime = floor
        self._entities[entity.id] = entity

    def remove(self, entity):
        del self._entities[entity.id]


def pick_next(queue):
    """Entity with the smallest vruntime; lowest task id wins ties."""
    return min(queue, key=lambda e: e.sort_key, default=None)
