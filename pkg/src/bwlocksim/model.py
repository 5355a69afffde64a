"""Task, core and scenario types, plus the JSON scenario document reader/writer.

All times are kept as :class:`fractions.Fraction` milliseconds so that the
simulator can do exact event arithmetic. Decimal numbers in a scenario
document are parsed straight into fractions (``0.3`` is exactly 3/10).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, NamedTuple

FORMAT_VERSION = 1

DEFAULT_MAX_BUDGET = 10**15
DEFAULT_CEILING_PRIORITY = 99  # MAX_USER_RT_PRIO - 1 on Linux


class ScenarioError(Exception):
    """Base class for problems with a scenario document."""


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, msg, line=None, col=None):
        self.line = line
        self.col = col
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(f"{msg}{where}")


class ScenarioValidationError(ScenarioError):
    def __init__(self, field_name, rule):
        self.field = field_name
        self.rule = rule
        super().__init__(f"{field_name}: {rule}")


class SegmentKind(str, Enum):
    COMPUTE = "compute"
    SYNC_COPY = "copy"
    ASYNC_COPY = "copy_async"
    KERNEL = "kernel"
    DEVICE_SYNC = "device_sync"
    STREAM_SYNC = "stream_sync"
    THREAD_SYNC = "thread_sync"
    CONFIGURE = "configure"


TIMED_KINDS = {SegmentKind.COMPUTE, SegmentKind.SYNC_COPY, SegmentKind.ASYNC_COPY, SegmentKind.KERNEL}
GPU_KINDS = {SegmentKind.SYNC_COPY, SegmentKind.ASYNC_COPY, SegmentKind.KERNEL}
STREAM_KINDS = {SegmentKind.ASYNC_COPY, SegmentKind.KERNEL, SegmentKind.STREAM_SYNC}


class SchedulerMode(str, Enum):
    CFS = "cfs"
    TFS = "tfs"


class ContentionMode(str, Enum):
    NONE = "none"
    LINEAR = "linear"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    duration: Fraction = Fraction(0)
    stream: int | None = None


@dataclass(frozen=True)
class RtTaskSpec:
    """Periodic real-time task pinned to the real-time core.

    ``priority`` follows the Linux RT convention: larger is more urgent.
    """

    id: str
    period: Fraction
    priority: int
    segments: tuple[Segment, ...] = ()


@dataclass(frozen=True)
class BestEffortTaskSpec:
    id: str
    weight: Fraction
    demand_rate: Fraction  # bytes per ms of execution
    core: int
    work: Fraction | None = None  # None: always runnable
    initial_vruntime: Fraction = Fraction(0)


@dataclass(frozen=True)
class ContentionParams:
    mode: ContentionMode = ContentionMode.LINEAR
    alpha: Fraction = Fraction("2.3")
    bw_ref: Fraction = Fraction(3_000_000)


@dataclass(frozen=True)
class SystemConfig:
    n_cores: int
    rt_core: int
    throttle_budget: int
    regulation_period: Fraction = Fraction(1)
    max_budget: int = DEFAULT_MAX_BUDGET
    tfs_rho: Fraction = Fraction(1)
    ceiling_priority: int = DEFAULT_CEILING_PRIORITY
    slowdown: ContentionParams = field(default_factory=ContentionParams)
    tick_resolution: Fraction = Fraction("0.01")

    @property
    def be_cores(self):
        return [c for c in range(self.n_cores) if c != self.rt_core]


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    rt_tasks: tuple[RtTaskSpec, ...] = ()
    be_tasks: tuple[BestEffortTaskSpec, ...] = ()
    sim_duration: Fraction = Fraction(1)
    scheduler: SchedulerMode = SchedulerMode.CFS

    @property
    def rho(self):
        """Punishment factor actually in effect (zero under plain CFS)."""
        return self.config.tfs_rho if self.scheduler is SchedulerMode.TFS else Fraction(0)

    @property
    def overfull_tasks(self):
        """Ids of RT tasks whose nominal demand exceeds their period."""
        return [t.id for t in self.rt_tasks if derived_wcet(t).E > t.period]

    def with_overrides(self, **kw):
        """Copy with scheduler/config fields replaced, re-validated."""
        cfg_fields = {k: kw.pop(k) for k in list(kw) if k in SystemConfig.__dataclass_fields__}
        cfg = replace(self.config, **cfg_fields) if cfg_fields else self.config
        out = replace(self, config=cfg, **kw)
        validate_scenario(out)
        return out


class Wcet(NamedTuple):
    C: Fraction
    Gm: Fraction
    Ge: Fraction
    E: Fraction


def derived_wcet(task):
    """Sum segment durations by kind.

    Synchronous copies count as copy time; asynchronous copies overlap
    kernel execution and are charged to the kernel window instead.
    """
    C = Gm = Ge = Fraction(0)
    for seg in task.segments:
        if seg.kind is SegmentKind.COMPUTE:
            C += seg.duration
        elif seg.kind is SegmentKind.SYNC_COPY:
            Gm += seg.duration
        elif seg.kind in (SegmentKind.KERNEL, SegmentKind.ASYNC_COPY):
            Ge += seg.duration
    return Wcet(C, Gm, Ge, C + Gm + Ge)


# -- validation ---------------------------------------------------------------


def _check(cond, field_name, rule):
    if not cond:
        raise ScenarioValidationError(field_name, rule)


def validate_scenario(s):
    cfg = s.config
    _check(cfg.n_cores >= 1, "config.n_cores", "must be >= 1")
    _check(0 <= cfg.rt_core < cfg.n_cores, "config.rt_core", "must be a core index below n_cores")
    _check(cfg.regulation_period > 0, "config.regulation_period_ms", "must be > 0")
    _check(0 < cfg.throttle_budget < cfg.max_budget, "config.throttle_budget_bytes",
           "must satisfy 0 < budget < max_budget")
    _check(cfg.tfs_rho >= 0, "config.tfs_rho", "must be >= 0")
    _check(cfg.ceiling_priority >= 2, "config.ceiling_priority", "must be >= 2")
    _check(cfg.tick_resolution > 0, "config.tick_resolution_ms", "must be > 0")
    _check(cfg.slowdown.alpha >= 0, "config.slowdown.alpha", "must be >= 0")
    _check(cfg.slowdown.bw_ref > 0, "config.slowdown.bw_ref", "must be > 0")
    _check(s.sim_duration > 0, "sim_duration_ms", "must be > 0")

    seen = set()
    for i, t in enumerate(s.rt_tasks):
        where = f"rt_tasks[{i}]"
        _check(t.id not in seen, f"{where}.id", f"duplicate id {t.id!r}")
        seen.add(t.id)
        _check(t.period > 0, f"{where}.period_ms", "must be > 0")
        _check(1 <= t.priority <= cfg.ceiling_priority - 1, f"{where}.priority",
               f"must be within [1, {cfg.ceiling_priority - 1}]")
        for j, seg in enumerate(t.segments):
            sw = f"{where}.segments[{j}]"
            if seg.kind in TIMED_KINDS:
                _check(seg.duration > 0, f"{sw}.ms", f"{seg.kind.value} needs a positive duration")
            else:
                _check(seg.duration == 0, f"{sw}.ms", f"{seg.kind.value} carries no duration")
            if seg.kind in STREAM_KINDS:
                _check(seg.stream is not None and seg.stream >= 0, f"{sw}.stream",
                       f"{seg.kind.value} needs a non-negative stream id")
            else:
                _check(seg.stream is None, f"{sw}.stream", f"{seg.kind.value} takes no stream")
    for i, t in enumerate(s.be_tasks):
        where = f"be_tasks[{i}]"
        _check(t.id not in seen, f"{where}.id", f"duplicate id {t.id!r}")
        seen.add(t.id)
        _check(t.weight > 0, f"{where}.weight", "must be > 0")
        _check(t.demand_rate >= 0, f"{where}.demand_rate", "must be >= 0")
        _check(0 <= t.core < cfg.n_cores, f"{where}.core", "must be a core index below n_cores")
        _check(t.core != cfg.rt_core, f"{where}.core", "best-effort tasks may not run on the real-time core")
        _check(t.work is None or t.work > 0, f"{where}.work_ms", "must be > 0 when given")
        _check(t.initial_vruntime >= 0, f"{where}.initial_vruntime_ms", "must be >= 0")
    return s


# -- document parsing ---------------------------------------------------------


def _frac(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, Fraction)):
        raise ScenarioValidationError(name, "must be a number")
    return Fraction(v)


def _int(v, name):
    if isinstance(v, Fraction) and v.denominator == 1:
        v = int(v)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioValidationError(name, "must be an integer")
    return v


def _keys(d, allowed, name):
    if not isinstance(d, dict):
        raise ScenarioValidationError(name, "must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ScenarioValidationError(name, f"unknown keys {extra}")


def _require(d, key, name):
    if key not in d:
        raise ScenarioValidationError(f"{name}.{key}" if name else key, "is required")
    return d[key]


def _enum(cls, v, name):
    try:
        return cls(v)
    except ValueError:
        raise ScenarioValidationError(name, f"must be one of {[m.value for m in cls]}") from None


def _parse_config(d):
    _keys(d, {"n_cores", "rt_core", "regulation_period_ms", "throttle_budget_bytes", "max_budget_bytes",
              "tfs_rho", "ceiling_priority", "tick_resolution_ms", "slowdown"}, "config")
    sd = d.get("slowdown", {})
    _keys(sd, {"mode", "alpha", "bw_ref"}, "config.slowdown")
    defaults = ContentionParams()
    slowdown = ContentionParams(
        mode=_enum(ContentionMode, sd.get("mode", defaults.mode.value), "config.slowdown.mode"),
        alpha=_frac(sd.get("alpha", defaults.alpha), "config.slowdown.alpha"),
        bw_ref=_frac(sd.get("bw_ref", defaults.bw_ref), "config.slowdown.bw_ref"),
    )
    return SystemConfig(
        n_cores=_int(_require(d, "n_cores", "config"), "config.n_cores"),
        rt_core=_int(_require(d, "rt_core", "config"), "config.rt_core"),
        throttle_budget=_int(_require(d, "throttle_budget_bytes", "config"), "config.throttle_budget_bytes"),
        regulation_period=_frac(d.get("regulation_period_ms", 1), "config.regulation_period_ms"),
        max_budget=_int(d.get("max_budget_bytes", DEFAULT_MAX_BUDGET), "config.max_budget_bytes"),
        tfs_rho=_frac(d.get("tfs_rho", 1), "config.tfs_rho"),
        ceiling_priority=_int(d.get("ceiling_priority", DEFAULT_CEILING_PRIORITY), "config.ceiling_priority"),
        slowdown=slowdown,
        tick_resolution=_frac(d.get("tick_resolution_ms", Fraction("0.01")), "config.tick_resolution_ms"),
    )


def _parse_segment(d, name):
    _keys(d, {"kind", "ms", "stream"}, name)
    kind = _enum(SegmentKind, _require(d, "kind", name), f"{name}.kind")
    stream = d.get("stream")
    if stream is not None:
        stream = _int(stream, f"{name}.stream")
    return Segment(kind, _frac(d.get("ms", 0), f"{name}.ms"), stream)


def _parse_rt(d, name):
    _keys(d, {"id", "period_ms", "priority", "segments"}, name)
    segs = _require(d, "segments", name)
    if not isinstance(segs, list):
        raise ScenarioValidationError(f"{name}.segments", "must be a list")
    tid = _require(d, "id", name)
    _check(isinstance(tid, str) and tid, f"{name}.id", "must be a non-empty string")
    return RtTaskSpec(
        id=tid,
        period=_frac(_require(d, "period_ms", name), f"{name}.period_ms"),
        priority=_int(_require(d, "priority", name), f"{name}.priority"),
        segments=tuple(_parse_segment(s, f"{name}.segments[{i}]") for i, s in enumerate(segs)),
    )


def _parse_be(d, name):
    _keys(d, {"id", "weight", "demand_rate", "core", "work_ms", "initial_vruntime_ms"}, name)
    tid = _require(d, "id", name)
    _check(isinstance(tid, str) and tid, f"{name}.id", "must be a non-empty string")
    work = d.get("work_ms")
    return BestEffortTaskSpec(
        id=tid,
        weight=_frac(d.get("weight", 1), f"{name}.weight"),
        demand_rate=_frac(_require(d, "demand_rate", name), f"{name}.demand_rate"),
        core=_int(_require(d, "core", name), f"{name}.core"),
        work=None if work is None else _frac(work, f"{name}.work_ms"),
        initial_vruntime=_frac(d.get("initial_vruntime_ms", 0), f"{name}.initial_vruntime_ms"),
    )


def scenario_from_dict(doc):
    _keys(doc, {"format_version", "config", "rt_tasks", "be_tasks", "sim_duration_ms", "scheduler"}, "scenario")
    version = doc.get("format_version", FORMAT_VERSION)
    _check(version == FORMAT_VERSION, "format_version", f"unsupported version {version}")
    rt = doc.get("rt_tasks", [])
    be = doc.get("be_tasks", [])
    _check(isinstance(rt, list), "rt_tasks", "must be a list")
    _check(isinstance(be, list), "be_tasks", "must be a list")
    s = Scenario(
        config=_parse_config(_require(doc, "config", "")),
        rt_tasks=tuple(_parse_rt(t, f"rt_tasks[{i}]") for i, t in enumerate(rt)),
        be_tasks=tuple(_parse_be(t, f"be_tasks[{i}]") for i, t in enumerate(be)),
        sim_duration=_frac(_require(doc, "sim_duration_ms", ""), "sim_duration_ms"),
        scheduler=_enum(SchedulerMode, doc.get("scheduler", "cfs"), "scheduler"),
    )
    return validate_scenario(s)


def parse_scenario(text):
    """Parse and validate a scenario document.

    Raises :class:`ScenarioSyntaxError` for malformed JSON and
    :class:`ScenarioValidationError` for any broken invariant.
    """
    try:
        doc = json.loads(text, parse_float=Fraction)
    except json.JSONDecodeError as e:
        raise ScenarioSyntaxError(e.msg, e.lineno, e.colno) from None
    return scenario_from_dict(doc)


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- rendering ----------------------------------------------------------------


def num(x):
    """JSON-friendly number: ints stay ints, everything else becomes a float."""
    x = Fraction(x)
    return int(x) if x.denominator == 1 else float(x)


def scenario_to_dict(s):
    cfg = s.config

    def seg(g):
        out = {"kind": g.kind.value}
        if g.kind in TIMED_KINDS:
            out["ms"] = num(g.duration)
        if g.stream is not None:
            out["stream"] = g.stream
        return out

    def be(t):
        out = {"id": t.id, "weight": num(t.weight), "demand_rate": num(t.demand_rate), "core": t.core}
        if t.work is not None:
            out["work_ms"] = num(t.work)
        if t.initial_vruntime:
            out["initial_vruntime_ms"] = num(t.initial_vruntime)
        return out

    return {
        "format_version": FORMAT_VERSION,
        "config": {
            "n_cores": cfg.n_cores,
            "rt_core": cfg.rt_core,
            "regulation_period_ms": num(cfg.regulation_period),
            "throttle_budget_bytes": cfg.throttle_budget,
            "max_budget_bytes": cfg.max_budget,
            "tfs_rho": num(cfg.tfs_rho),
            "ceiling_priority": cfg.ceiling_priority,
            "tick_resolution_ms": num(cfg.tick_resolution),
            "slowdown": {
                "mode": cfg.slowdown.mode.value,
                "alpha": num(cfg.slowdown.alpha),
                "bw_ref": num(cfg.slowdown.bw_ref),
            },
        },
        "rt_tasks": [
            {"id": t.id, "period_ms": num(t.period), "priority": t.priority,
             "segments": [seg(g) for g in t.segments]}
            for t in s.rt_tasks
        ],
        "be_tasks": [be(t) for t in s.be_tasks],
        "sim_duration_ms": num(s.sim_duration),
        "scheduler": s.scheduler.value,
    }


def render_scenario(s):
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"
