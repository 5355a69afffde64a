"""Stream-aware bandwidth-lock tracking for intercepted GPU runtime calls.

Each real-time task gets a :class:`StreamTracker`. Feeding it API events
yields the lock actions the interposed wrappers would perform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .model import SegmentKind


class ApiKind(str, Enum):
    CONFIGURE_CALL = "configure_call"
    MEMCPY = "memcpy"
    MEMCPY_ASYNC = "memcpy_async"
    LAUNCH = "launch"
    DEVICE_SYNC = "device_sync"
    THREAD_SYNC = "thread_sync"
    STREAM_SYNC = "stream_sync"


class LockAction(str, Enum):
    ACQUIRE = "acquire"
    RELEASE = "release"


ACQUIRE = LockAction.ACQUIRE
RELEASE = LockAction.RELEASE

DEFAULT_STREAM = 0


@dataclass(frozen=True)
class ApiEvent:
    kind: ApiKind
    stream: int | None = None


@dataclass
class StreamTracker:
    active: set = field(default_factory=set)
    lock_held: bool = False
    pending_launch_stream: int | None = None
    warnings: list = field(default_factory=list)

    def check(self):
        assert self.lock_held == bool(self.active), "lock/activity mismatch"


def on_api_event(event, tracker):
    """Apply one API event; return the ordered lock actions it implies.

    A synchronous ``MEMCPY`` brackets the copy: the returned ``[ACQUIRE,
    RELEASE]`` means acquire before and release after. When other streams are
    active the lock is already held and stays held, so no action is emitted.
    """
    kind = event.kind
    actions = []

    def acquire():
        if not tracker.lock_held:
            tracker.lock_held = True
            actions.append(ACQUIRE)

    def release():
        assert tracker.lock_held, "release without holding the lock"
        tracker.lock_held = False
        actions.append(RELEASE)

    if kind is ApiKind.CONFIGURE_CALL:
        tracker.pending_launch_stream = event.stream
    elif kind is ApiKind.MEMCPY:
        if not tracker.lock_held:
            acquire()
            release()
    elif kind is ApiKind.MEMCPY_ASYNC:
        acquire()
        tracker.active.add(event.stream)
    elif kind is ApiKind.LAUNCH:
        stream = event.stream
        if stream is None:
            stream = tracker.pending_launch_stream
        if stream is None:
            stream = DEFAULT_STREAM
        tracker.pending_launch_stream = None
        acquire()
        tracker.active.add(stream)
    elif kind in (ApiKind.DEVICE_SYNC, ApiKind.THREAD_SYNC):
        tracker.active.clear()
        if tracker.lock_held:
            release()
    elif kind is ApiKind.STREAM_SYNC:
        if event.stream not in tracker.active:
            tracker.warnings.append(f"stream_sync on inactive stream {event.stream}")
        else:
            tracker.active.discard(event.stream)
            if not tracker.active:
                release()
    else:  # pragma: no cover
        raise ValueError(f"unknown API event {kind!r}")
    return actions


def api_events_for(segment):
    """API calls a task issues for one segment of its program."""
    k = segment.kind
    if k is SegmentKind.COMPUTE:
        return []
    if k is SegmentKind.SYNC_COPY:
        return [ApiEvent(ApiKind.MEMCPY)]
    if k is SegmentKind.ASYNC_COPY:
        return [ApiEvent(ApiKind.MEMCPY_ASYNC, segment.stream)]
    if k is SegmentKind.KERNEL:
        return [ApiEvent(ApiKind.CONFIGURE_CALL, segment.stream), ApiEvent(ApiKind.LAUNCH)]
    if k is SegmentKind.CONFIGURE:
        return [ApiEvent(ApiKind.CONFIGURE_CALL)]
    if k is SegmentKind.DEVICE_SYNC:
        return [ApiEvent(ApiKind.DEVICE_SYNC)]
    if k is SegmentKind.THREAD_SYNC:
        return [ApiEvent(ApiKind.THREAD_SYNC)]
    if k is SegmentKind.STREAM_SYNC:
        return [ApiEvent(ApiKind.STREAM_SYNC, segment.stream)]
    raise ValueError(k)


def lock_intervals(segments):
    """Nominal length of every maximal lock-held stretch of a segment list.

    Durations of all segments executed while the shim holds the lock are
    summed, so a chain of kernels and copies kept locked across streams is a
    single interval. A program that ends with active streams is treated as
    draining them at completion.
    """
    tracker = StreamTracker()
    out = []
    current = None
    for seg in segments:
        for ev in api_events_for(seg):
            actions = on_api_event(ev, tracker)
            if ev.kind is ApiKind.MEMCPY:
                if actions:
                    out.append(seg.duration)  # bracketed on its own
                continue
            for action in actions:
                if action is ACQUIRE:
                    current = Fraction(0)
                else:
                    out.append(current)
                    current = None
        if current is not None:
            current += seg.duration
    if current is not None:
        out.append(current)
    return out
