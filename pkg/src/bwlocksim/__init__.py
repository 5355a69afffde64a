"""Simulation and analysis of bandwidth-locked CPU-GPU scheduling.

The bandwidth lock is taken by a real-time GPU task (automatically, via a
stream-tracking shim over GPU runtime calls) and raises its priority to the
ceiling. While it is held, best-effort cores run under a per-period memory
budget and are throttled once they exhaust it. The Throttle Fair Scheduler
(TFS) charges throttled time back to a task's virtual runtime so that
memory-hungry best-effort tasks stop being favoured.
"""

from .analysis import AnalysisResult, blocking_term, response_time
from .engine import Metrics, SimTrace, observed_response_time, run
from .model import (
    BestEffortTaskSpec,
    ContentionParams,
    RtTaskSpec,
    Scenario,
    Segment,
    SegmentKind,
    SystemConfig,
    derived_wcet,
    load_scenario,
    parse_scenario,
    render_scenario,
)
from .scenarios import builtin

__all__ = [
    "AnalysisResult",
    "BestEffortTaskSpec",
    "ContentionParams",
    "Metrics",
    "RtTaskSpec",
    "Scenario",
    "Segment",
    "SegmentKind",
    "SimTrace",
    "SystemConfig",
    "blocking_term",
    "builtin",
    "derived_wcet",
    "load_scenario",
    "observed_response_time",
    "parse_scenario",
    "render_scenario",
    "response_time",
    "run",
]
