"""Data-plane runtimes of the collector and detector apps.

Both keep time-stamped histories of their configuration so that a change
enacted at time ``c`` applies exactly to data with timestamps ``>= c``, even
when the simulator processes a block of traffic after the fact.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .detection import NeuralNet, Symptom, classify_batch
from .flows import (CollectorConfig, FeatureBatch, FeatureBatcher, FeatureVector, FlowCollector,
                    FlowRecord)
from .perf import BackendProfile, PipelineConfig, t_ev_lookup


class _History:
    """Step function of time, queried with ``at(t)``."""

    def __init__(self, t0: float, value):
        self.times = [t0]
        self.values = [value]

    def set(self, t: float, value) -> None:
        if t < self.times[-1]:
            raise ValueError("history updates must be time-ordered")
        if t == self.times[-1]:
            self.values[-1] = value
        else:
            self.times.append(t)
            self.values.append(value)

    def at(self, t: float):
        i = bisect.bisect_right(self.times, t) - 1
        return self.values[max(i, 0)]

    def current(self):
        return self.values[-1]

    def changes_in(self, t0: float, t1: float) -> list[float]:
        return [t for t in self.times if t0 < t < t1]


class FcService:
    """Flow collector app: windowing, batching and routing to a detector."""

    def __init__(self, ran_id: str, config: CollectorConfig, target: str, batch_size: int,
                 t0: float = 0.0):
        self.ran_id = ran_id
        self.collector = FlowCollector(config, ran_id)
        self.batcher = FeatureBatcher(batch_size, config.t_limit)
        self.targets = _History(t0, (target, batch_size))
        self.offsets = _History(t0, config.offset)
        self.emissions: list[tuple[float, float, int]] = []
        self.flows_in = 0

    @property
    def target(self) -> str:
        return self.targets.current()[0]

    @property
    def offset(self) -> int:
        return self.offsets.current()

    def target_at(self, t: float) -> str:
        return self.targets.at(t)[0]

    def redirect(self, at: float, app_id: str, batch_size: int) -> None:
        self.targets.set(at, (app_id, batch_size))

    def set_offset(self, at: float, offset: int) -> None:
        if offset < 1:
            raise ValueError("offset must be >= 1")
        self.offsets.set(at, offset)

    def segments(self, t0: float, t1: float) -> list[tuple[float, float]]:
        """Split ``[t0, t1)`` at configuration changes."""
        cuts = sorted(set(self.targets.changes_in(t0, t1)) | set(self.offsets.changes_in(t0, t1)))
        edges = [t0] + cuts + [t1]
        return list(zip(edges, edges[1:]))

    def _configure_for(self, t: float) -> None:
        offset = self.offsets.at(t)
        if offset != self.collector.offset:
            self.collector.set_offset(offset)
        size = self.targets.at(t)[1]
        if size != self.batcher.batch_size:
            self.batcher.resize(size)

    def ingest_flows(self, flows: list[FlowRecord], t0: float, t1: float
                     ) -> tuple[list[FeatureVector], list[FeatureBatch]]:
        """Individual-flow path for one segment; returns emitted vectors and closed batches."""
        self._configure_for(t0)
        vectors, batches = [], []
        for fl in flows:
            self.flows_in += 1
            fv = self.collector.ingest(fl)
            if fv is None:
                continue
            vectors.append(fv)
            batches += self.batcher.push(fv, fv.window_end)
        forced = self.batcher.flush_due(t1)
        if forced is not None:
            batches.append(forced)
        self.emissions.append((t0, t1, len(vectors)))
        return vectors, batches

    def ingest_count(self, count: int, t0: float, t1: float) -> int:
        """Aggregate path for one segment; returns the number of vectors emitted."""
        self._configure_for(t0)
        self.flows_in += count
        n = self.collector.ingest_count(count)
        self.emissions.append((t0, t1, n))
        return n

    def measured_feature_rate(self, now: float, period: float) -> float:
        start = now - period
        total = 0.0
        for a, b, n in reversed(self.emissions):
            if b <= start:
                break
            overlap = min(b, now) - max(a, start)
            if b > a and overlap > 0:
                total += n * overlap / (b - a)
        return total / period


@dataclass
class _Job:
    start: float
    done: float
    batch: FeatureBatch


class AsdService:
    """Detector app: a single evaluation server with a model history.

    Batches are evaluated in arrival order, each taking ``t_ev`` of its size.
    A batch is classified with the model in force when its evaluation starts.
    """

    def __init__(self, app_id: str, ran_id: str, profile: BackendProfile, batch_size: int,
                 net: NeuralNet, model_version: int = 1, t_limit: float = 5.0):
        self.app_id = app_id
        self.ran_id = ran_id
        self.profile = profile
        self.batch_size = batch_size
        self.t_limit = t_limit
        self.models = _History(-math.inf, (net, model_version, net.threshold))
        self.jobs: list[_Job] = []
        self.trace: list[_Job] = []  # every submitted batch, for inspection
        self.busy_until = -math.inf
        self.batches_in = 0
        self.batches_evaluated = 0
        self.features_in = 0
        self.backlog = 0.0
        self._synth: list[tuple[float, Symptom]] = []

    @property
    def model_version(self) -> int:
        return self.models.current()[1]

    @property
    def threshold(self) -> float:
        return self.models.current()[2]

    def pipeline(self, offset: int) -> PipelineConfig:
        return PipelineConfig(self.profile, self.batch_size, offset, self.t_limit)

    @property
    def capacity(self) -> float:
        """Evaluation throughput in features per second."""
        return self.batch_size / t_ev_lookup(self.profile, self.batch_size)

    def set_model(self, at: float, net: NeuralNet, version: int) -> None:
        self.models.set(at, (net, version, self.threshold))

    def set_threshold(self, at: float, threshold: float) -> None:
        net, version, _ = self.models.current()
        self.models.set(at, (net, version, threshold))

    def submit(self, batch: FeatureBatch) -> _Job:
        start = max(batch.fill_end, self.busy_until)
        done = start + t_ev_lookup(self.profile, min(len(batch), self.profile.max_batch))
        self.busy_until = done
        job = _Job(start, done, batch)
        self.jobs.append(job)
        self.trace.append(job)
        self.batches_in += 1
        self.features_in += len(batch)
        return job

    def offer_features(self, n: int, t0: float, t1: float) -> None:
        """Aggregate path: fluid backlog of features against evaluation capacity."""
        self.features_in += n
        self.batches_in += n // self.batch_size
        self.backlog = max(0.0, self.backlog + n - self.capacity * (t1 - t0))

    def classify_sample(self, vectors: list[FeatureVector], at: float, deliver_at: float) -> None:
        """Score a representative sample; its symptoms surface at ``deliver_at``."""
        if not vectors:
            return
        net, _, thr = self.models.at(at)
        for s in classify_batch(net, vectors, thr, deliver_at):
            self._synth.append((deliver_at, s))

    def queued(self, now: float) -> int:
        return sum(1 for j in self.jobs if j.done > now)

    def queue_depth(self, now: float) -> float:
        return self.queued(now) + self.backlog / self.batch_size

    def collect(self, now: float) -> list[Symptom]:
        """Finish every evaluation completed by ``now`` and return its symptoms."""
        out = []
        remaining = []
        for job in self.jobs:
            if job.done <= now:
                net, _, thr = self.models.at(job.start)
                out += classify_batch(net, job.batch, thr, job.done)
                self.batches_evaluated += 1
            else:
                remaining.append(job)
        self.jobs = remaining
        ready = [s for t, s in self._synth if t <= now]
        self._synth = [(t, s) for t, s in self._synth if t > now]
        return sorted(out + ready, key=lambda s: s.timestamp)
