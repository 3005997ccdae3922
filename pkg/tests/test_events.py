import numpy as np
import pytest

from mecad.events import EventKind, EventQueue, PastEventError


def test_equal_times_pop_in_insertion_order():
    q = EventQueue()
    kinds = [EventKind.FLOW_ARRIVAL_BLOCK, EventKind.SNAPSHOT_TICK, EventKind.POLICY_TICK]
    for k in kinds:
        q.schedule(3.0, k)
    assert [q.pop().kind for _ in kinds] == kinds


def test_schedule_at_now_is_legal_and_past_is_not():
    q = EventQueue()
    q.schedule(5.0, EventKind.WORKFLOW_STEP)
    q.pop()
    assert q.now == 5.0
    q.schedule(5.0, EventKind.WORKFLOW_STEP, "same instant")
    assert q.pop().payload == "same instant"
    with pytest.raises(PastEventError):
        q.schedule(4.999, EventKind.WORKFLOW_STEP)


def test_random_events_pop_sorted_and_stable():
    rng = np.random.default_rng(0)
    times = rng.integers(0, 1000, 100_000).astype(float)
    q = EventQueue()
    for i, t in enumerate(times):
        q.schedule(t, EventKind.FLOW_ARRIVAL_BLOCK, i)
    out = [q.pop() for _ in range(len(times))]
    oracle = sorted(range(len(times)), key=lambda i: (times[i], i))
    assert [e.payload for e in out] == oracle
    assert len(q) == 0 and q.peek_time() is None
