"""Closed-loop discrete-event simulation of the detection pipeline and its management.

Every ``sample_period`` the engine processes one block of traffic per RAN,
takes a monitoring snapshot, and lets the policy engine react. Traffic for
``[T, T + P)`` is generated and processed at ``T + P``; configuration changes
inside the block split it so each change applies from its exact time on.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import perf
from .detection import CountThresholdDetector, Hyperparams, NeuralNet, fit, fold_standardization, init_network
from .events import EventKind, EventQueue
from .flows import CollectorConfig, FlowGenerator, compute_features
from .orchestration import (AppKind, Capacity, ForecastConfig, LatencyConfig, ModelRegistry,
                            Orchestrator, ResourceLockedError, Vim, WorkflowEvent, World, snapshot)
from .perf import CPU_TF, GPU_CAFFE2, BackendProfile
from .policy import MonitoringSnapshot, Policy, PolicyEngine
from .scenario import ScenarioModel, flow_rate_at, mean_flow_rate

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {
    # the CPU pipeline's crossover rate at its anchored batch size, offset 1
    "NetFlowsMaxForCpu": perf.max_sustainable_rate(perf.PipelineConfig(CPU_TF, CPU_TF.best_batch, 1)),
    "RamUsageMax": 0.85,
    "RamDeltaGb": 4.0,
    "OffsetUtilizationMax": 0.9,
}


@dataclass
class SimConfig:
    scenario: ScenarioModel = field(default_factory=ScenarioModel)
    rans: tuple[str, ...] = ("ran-1",)
    profiles: dict[AppKind, BackendProfile] = field(
        default_factory=lambda: {AppKind.ASD_CPU: CPU_TF, AppKind.ASD_GPU: GPU_CAFFE2})
    latencies: LatencyConfig = field(default_factory=LatencyConfig)
    policies: list[Policy] = field(default_factory=list)
    thresholds: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    offset: int = 1
    t_limit: float = 5.0
    capacity: Capacity = field(default_factory=Capacity)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    model_releases: tuple[float, ...] = ()  # time units at which versions 2, 3, ... appear
    seed: int = 0
    augment_in_place: bool = False
    individual_cutoff: float = 1e4
    sample_windows: int = 64
    nad_k: int = 3
    nad_horizon: float = 10.0
    default_cooldown: float | None = None  # None means 2 * t_d
    keep_snapshots: bool = True

    def __post_init__(self):
        if not self.rans or len(set(self.rans)) != len(self.rans):
            raise ValueError("rans must be a non-empty list of unique ids")
        if self.offset < 1:
            raise ValueError("offset must be >= 1")
        if self.sample_windows < 1:
            raise ValueError("sample_windows must be >= 1")
        if any(b <= a for a, b in zip(self.model_releases, self.model_releases[1:])):
            raise ValueError("model_releases must be strictly increasing")
        missing = set().union(*(p.thresholds for p in self.policies)) - set(self.thresholds)
        if missing:
            raise ValueError(f"undefined policy thresholds: {sorted(missing)}")


# --- classifier bootstrap -----------------------------------------------------

def train_flow_classifier(rng: np.random.Generator, n_per_size: int = 400, epochs: int = 25,
                          window_sizes=(1, 2, 4), feature_dim: int = 288) -> NeuralNet:
    """Train a [288, 16, 8, 4, 1] detector on synthetic traffic windows.

    Inputs are standardised during training and the scaling is folded into
    the first layer, so the returned net consumes raw feature vectors.
    """
    gen = FlowGenerator(rng)
    xs, ys = [], []
    for w in window_sizes:
        cfg = CollectorConfig(offset=w, feature_dim=feature_dim)
        # per-flow fraction giving roughly a third of anomalous windows
        frac = 1 - (2 / 3) ** (1 / w)
        for win in gen.windows(n_per_size, w, 0.0, 60.0, frac):
            fv = compute_features(win, cfg)
            xs.append(fv.values)
            ys.append(1.0 if fv.is_anomalous else 0.0)
    x, y = np.array(xs), np.array(ys)
    mean, std = x.mean(axis=0), x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    net = init_network([feature_dim, 16, 8, 4, 1], seed=int(rng.integers(2**31)))
    fit(net, ((x - mean) / std, y), Hyperparams(learning_rate=0.05, epochs=epochs, threshold=0.5))
    return fold_standardization(net, mean, std)


# --- metrics ------------------------------------------------------------------

class MetricsLog:
    """Per-tick, per-RAN time series plus the workflow event log."""

    COLUMNS = ("time", "time_units", "ran", "flow_rate", "feature_rate", "active_backend", "offset",
               "batch_size", "t_fill", "t_ev", "mean_detection_time", "capacity_features",
               "queue_depth", "symptoms", "anomalies", "workflow_events", "true_flow_rate",
               "forecast_rate")
    _INT = frozenset({"offset", "batch_size", "symptoms", "anomalies", "workflow_events"})
    _STR = frozenset({"ran", "active_backend"})

    def __init__(self):
        self.rows: list[dict] = []
        self.workflow: list[WorkflowEvent] = []
        self.workflows: list[dict] = []

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: dict) -> None:
        if set(row) != set(self.COLUMNS):
            raise ValueError(f"row columns differ: {sorted(set(row) ^ set(self.COLUMNS))}")
        if self.rows and row["time"] < self.rows[-1]["time"]:
            raise ValueError("metrics timestamps must be non-decreasing")
        self.rows.append(row)

    def column(self, name: str, ran: str | None = None) -> list:
        return [r[name] for r in self.rows if ran is None or r["ran"] == ran]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        out = cls()
        for raw in csv.DictReader(io.StringIO(text)):
            row = {}
            for k in cls.COLUMNS:
                v = raw[k]
                row[k] = v if k in cls._STR else int(v) if k in cls._INT else float(v)
            out.append(row)
        return out

    def workflow_text(self) -> str:
        return "".join(ev.line() + "\n" for ev in self.workflow)

    def summary(self) -> dict:
        mdt = self.column("mean_detection_time")
        crossings: dict[str, float | None] = {}
        for name, prof in (("cpu-tf", CPU_TF), ("gpu-caffe2", GPU_CAFFE2)):
            for offset in (1, 2, 4):
                rate = perf.max_sustainable_rate(perf.PipelineConfig(prof, prof.best_batch, offset))
                hit = next((r["time_units"] for r in self.rows if r["true_flow_rate"] >= rate), None)
                crossings[f"{name}@offset{offset}"] = hit
        switches, last = [], {}
        for r in self.rows:
            key = (r["active_backend"], r["offset"])
            if r["ran"] in last and last[r["ran"]] != key:
                switches.append({"time_units": r["time_units"], "ran": r["ran"],
                                 "backend": r["active_backend"], "offset": r["offset"]})
            last[r["ran"]] = key
        return {
            "rows": len(self.rows),
            "crossover_times": crossings,
            "configuration_changes": switches,
            "max_mean_detection_time": max(mdt) if mdt else None,
            "overload_ticks": sum(1 for r in self.rows if r["feature_rate"] > r["capacity_features"]),
            "workflows": self.workflows,
        }


def report(log: MetricsLog, fmt: str) -> str:
    """Render ``log`` as ``csv`` (one row per tick and RAN) or a ``json`` summary."""
    if fmt == "csv":
        return log.to_csv()
    if fmt == "json":
        return json.dumps(log.summary(), indent=2, sort_keys=True)
    raise ValueError(f"unknown report format {fmt!r} (expected csv or json)")


# --- engine -------------------------------------------------------------------

class Simulation:
    """Deterministic closed-loop run for one :class:`SimConfig`."""

    def __init__(self, config: SimConfig):
        self.config = cfg = config
        self.rng = np.random.default_rng(cfg.seed)
        self.scenario = cfg.scenario
        self.period = cfg.scenario.to_seconds(cfg.scenario.sample_period)
        registry = ModelRegistry()
        registry.add(-math.inf, 1, train_flow_classifier(self.rng))
        for i, t in enumerate(cfg.model_releases, start=2):
            registry.add(cfg.scenario.to_seconds(t), i, train_flow_classifier(self.rng, epochs=40))
        forecast_cfg = ForecastConfig(cfg.forecast.enabled, cfg.forecast.safety, cfg.forecast.window,
                                      cfg.scenario.time_unit)
        collector = CollectorConfig(offset=cfg.offset, t_limit=cfg.t_limit)
        vim = Vim({r: cfg.capacity for r in cfg.rans})
        self.world = World(dict(cfg.profiles), vim, registry, collector, forecast_cfg, cfg.latencies)
        self.world.nad.detector = CountThresholdDetector(cfg.nad_k, cfg.nad_horizon)
        for r in cfg.rans:
            self.world.add_ran(r, 0.0)
        self.queue = EventQueue(0.0)
        self.orchestrator = Orchestrator(self.world, self.queue, cfg.latencies, cfg.augment_in_place)
        cooldown = 2 * cfg.latencies.t_d if cfg.default_cooldown is None else cfg.default_cooldown
        self.engine = PolicyEngine(cfg.policies, cfg.thresholds, cooldown)
        self.generator = FlowGenerator(self.rng)
        self.log = MetricsLog()
        self.snapshots: list[MonitoringSnapshot] = []
        self.dropped: list[tuple[float, Any, str]] = []
        self.injected = {r: 0 for r in cfg.rans}
        self.clock: list[float] = []
        self._tick = {r: {"symptoms": 0, "anomalies": 0} for r in cfg.rans}
        self._last_snapshot: MonitoringSnapshot | None = None
        self._wf_seen = 0
        self._started = False

    # --- handlers -------------------------------------------------------------

    def _flow_block(self, t1: float) -> None:
        t0 = t1 - self.period
        sc, w = self.scenario, self.world
        for ran in self.config.rans:
            fc = w.fc[ran]
            total = 0
            for a, b in fc.segments(t0, t1):
                rate = mean_flow_rate(sc, sc.to_units(a), sc.to_units(b))
                n = int(self.rng.poisson(rate * (b - a)))
                frac = sc.anomalous_fraction(ran, sc.to_units(a))
                svc = w.asd[fc.target_at(a)]
                total += n
                if rate < self.config.individual_cutoff:
                    flows = self.generator.generate(n, a, b, frac)
                    _, batches = fc.ingest_flows(flows, a, b)
                    for batch in batches:
                        svc.submit(batch)
                else:
                    nvec = fc.ingest_count(n, a, b)
                    svc.offer_features(nvec, a, b)
                    self._sample_symptoms(fc, svc, nvec, rate, frac, a, b)
            self.injected[ran] += total
            w.add_rate_sample(ran, sc.to_units(t1), total / self.period)
            symptoms = []
            for app_id, svc in sorted(w.asd.items()):
                if svc.ran_id == ran and w.app_vm(app_id).state.value != "GONE":
                    symptoms += svc.collect(t1)
            w.nad.receive(symptoms)
            self._tick[ran]["symptoms"] += len(symptoms)
        anomaly = w.nad.score(t1)
        if anomaly is not None:
            for ran in anomaly.ran_ids:
                w.rans[ran].nad_reports.append({
                    "anomaly_type": anomaly.anomaly_type,
                    "suspicious_cc": anomaly.anomaly_type == "SUSPICIOUS_CC",
                    "ran": ran, "count": anomaly.count})
                self._tick[ran]["anomalies"] += 1
                if w.rans[ran].has_dpi:
                    w.dpi_verdicts.append((t1 + self.config.latencies.t_dpi_verdict, ran,
                                           f"{anomaly.anomaly_type} confirmed by DPI"))
        self.queue.schedule(t1 + self.period, EventKind.FLOW_ARRIVAL_BLOCK)

    def _sample_symptoms(self, fc, svc, nvec, rate, frac, a, b) -> None:
        """Classify a representative sample of the block's windows."""
        m = min(self.config.sample_windows, nvec)
        if m == 0:
            return
        cfg = fc.collector.config
        pipeline = svc.pipeline(cfg.offset)
        lag = perf.mean_detection_time(pipeline, rate) if rate > 0 else cfg.t_limit
        vectors = [compute_features(win, cfg, fc.ran_id)
                   for win in self.generator.windows(m, cfg.window_size, a, b, frac)]
        for fv in vectors:
            svc.classify_sample([fv], at=b, deliver_at=fv.window_end + lag)

    def _snapshot_tick(self, now: float) -> None:
        w, sc = self.world, self.scenario
        snap = snapshot(w, now, self.period, self.orchestrator.locked)
        self._last_snapshot = snap
        if self.config.keep_snapshots:
            self.snapshots.append(snap)
        wf_events = len(self.orchestrator.log) - self._wf_seen
        self._wf_seen = len(self.orchestrator.log)
        for ran in self.config.rans:
            fc = w.fc[ran]
            svc = w.asd[fc.target]
            offset = fc.offset
            pipeline = svc.pipeline(offset)
            rate = w.measured_flow_rate(ran)
            te = perf.t_ev(pipeline)
            if rate > 0:
                tf, mdt = perf.t_fill(pipeline, rate), perf.mean_detection_time(pipeline, rate)
            else:
                tf, mdt = pipeline.t_limit, pipeline.t_limit + te
            self.log.append({
                "time": now, "time_units": sc.to_units(now), "ran": ran, "flow_rate": rate,
                "feature_rate": fc.measured_feature_rate(now, self.period),
                "active_backend": svc.profile.name, "offset": offset, "batch_size": svc.batch_size,
                "t_fill": tf, "t_ev": te, "mean_detection_time": mdt,
                "capacity_features": svc.capacity, "queue_depth": svc.queue_depth(now),
                "symptoms": self._tick[ran]["symptoms"], "anomalies": self._tick[ran]["anomalies"],
                "workflow_events": wf_events, "true_flow_rate": flow_rate_at(sc, sc.to_units(now)),
                "forecast_rate": snap.rans[ran]["forecast_rate"],
            })
            self._tick[ran] = {"symptoms": 0, "anomalies": 0}
        self.queue.schedule(now + self.period, EventKind.SNAPSHOT_TICK)

    def _policy_tick(self, now: float) -> None:
        dropped: list = []
        for action in self.engine.step(self._last_snapshot, dropped):
            try:
                self.orchestrator.enact(action, now)
            except ResourceLockedError as exc:
                dropped.append((action, str(exc)))
        for action, reason in dropped:
            log.info("t=%.3f dropped %s: %s", now, action, reason)
            self.dropped.append((now, action, reason))
        self.queue.schedule(now + self.period, EventKind.POLICY_TICK)

    # --- driver ---------------------------------------------------------------

    def run_until(self, t_end: float | None = None) -> MetricsLog:
        """Advance to ``t_end`` time units (default: the scenario duration)."""
        sc = self.scenario
        end = sc.to_seconds(sc.duration if t_end is None else t_end)
        if not self._started:
            for kind in (EventKind.FLOW_ARRIVAL_BLOCK, EventKind.SNAPSHOT_TICK, EventKind.POLICY_TICK):
                self.queue.schedule(self.period, kind)
            self._started = True
        handlers = {
            EventKind.FLOW_ARRIVAL_BLOCK: self._flow_block,
            EventKind.SNAPSHOT_TICK: self._snapshot_tick,
            EventKind.POLICY_TICK: self._policy_tick,
        }
        # tolerate float drift so the tick landing on end is processed
        while len(self.queue) and self.queue.peek_time() <= end + 1e-9 * max(1.0, end):
            ev = self.queue.pop()
            self.clock.append(ev.time)
            if ev.kind is EventKind.WORKFLOW_STEP:
                self.orchestrator.handle(ev)
            else:
                handlers[ev.kind](ev.time)
        self.log.workflow = list(self.orchestrator.log)
        self.log.workflows = [{
            "id": wf.workflow_id, "action": str(wf.action), "status": wf.status.value,
            "started_at": wf.started_at, "finished_at": wf.finished_at,
            "steps": [ev.step for ev in wf.events], "error": wf.error,
        } for wf in self.orchestrator.workflows.values()]
        return self.log


def run_until(sim: Simulation, t_end: float | None = None) -> MetricsLog:
    return sim.run_until(t_end)
