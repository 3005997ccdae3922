"""Timestamped events and a deterministic priority queue."""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any


class EventKind(str, enum.Enum):
    FLOW_ARRIVAL_BLOCK = "FLOW_ARRIVAL_BLOCK"
    FEATURE_EMIT = "FEATURE_EMIT"
    BATCH_EVAL_DONE = "BATCH_EVAL_DONE"
    SNAPSHOT_TICK = "SNAPSHOT_TICK"
    POLICY_TICK = "POLICY_TICK"
    WORKFLOW_STEP = "WORKFLOW_STEP"
    FLUSH_TIMER = "FLUSH_TIMER"


class PastEventError(ValueError):
    """An event was scheduled before the current clock."""


@dataclass(frozen=True, order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


class EventQueue:
    """Min-heap of events ordered by ``(time, seq)``.

    ``seq`` is assigned on insertion, so events sharing a timestamp pop in
    insertion order.
    """

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list[Event] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> Event:
        if time < self.now:
            raise PastEventError(f"cannot schedule {kind.value} at {time} < clock {self.now}")
        ev = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> float | None:
        return self._heap[0].time if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev
