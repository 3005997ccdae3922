"""Simulated orchestrator, VIM and platform manager.

Management actions are enacted as workflows: Python generators that yield
``(delay, step, actor, description, effect)`` tuples. The orchestrator turns
each yield into a ``WORKFLOW_STEP`` event; when the event fires the effect is
applied, the step is logged, and the generator is advanced. Step numbers
follow the fourteen-step scale-up sequence; shorter workflows use a subset.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from .detection import NadAggregator, NeuralNet
from .events import Event, EventKind, EventQueue
from .flows import CollectorConfig
from .perf import BackendProfile, max_sustainable_rate
from .policy import ActionKind, ActionRequest, MonitoringSnapshot
from .scenario import RateSample, estimate_derivative, forecast
from .services import AsdService, FcService


class VmState(str, enum.Enum):
    REQUESTED = "REQUESTED"
    DEPLOYING = "DEPLOYING"
    RUNNING = "RUNNING"
    DISMANTLING = "DISMANTLING"
    GONE = "GONE"


class AppKind(str, enum.Enum):
    FLOW_COLLECTOR = "FLOW_COLLECTOR"
    ASD_CPU = "ASD_CPU"
    ASD_GPU = "ASD_GPU"
    NAD = "NAD"
    DPI = "DPI"


class AppState(str, enum.Enum):
    STARTING = "STARTING"
    OK = "OK"
    STOPPED = "STOPPED"


ASD_KINDS = (AppKind.ASD_CPU, AppKind.ASD_GPU)

_VM_NEXT = {
    VmState.REQUESTED: {VmState.DEPLOYING},
    VmState.DEPLOYING: {VmState.RUNNING},
    VmState.RUNNING: {VmState.DISMANTLING},
    VmState.DISMANTLING: {VmState.GONE},
    VmState.GONE: set(),
}
_APP_NEXT = {
    AppState.STARTING: {AppState.OK, AppState.STOPPED},
    AppState.OK: {AppState.STOPPED},
    AppState.STOPPED: set(),
}


class IllegalTransitionError(RuntimeError):
    pass


class ResourceLockedError(RuntimeError):
    """An action touches resources held by another running workflow."""


class ConfigTargetError(RuntimeError):
    """A configuration change targets an app that is not running."""


class WorkflowFailure(RuntimeError):
    """Raised by a step effect to abort its workflow."""


@dataclass
class AppInstance:
    id: str
    kind: AppKind
    vm_id: str
    ran_id: str
    config: dict = field(default_factory=dict)
    state: AppState = AppState.STARTING

    def transition(self, new: AppState) -> None:
        if new not in _APP_NEXT[self.state]:
            raise IllegalTransitionError(f"app {self.id}: {self.state.value} -> {new.value}")
        self.state = new


@dataclass
class VmInstance:
    id: str
    ran_id: str
    cpus: int
    ram_gb: float
    gpu: bool = False
    role: str = ""
    state: VmState = VmState.REQUESTED
    hosted_apps: list[AppInstance] = field(default_factory=list)

    def transition(self, new: VmState) -> None:
        if new not in _VM_NEXT[self.state]:
            raise IllegalTransitionError(f"vm {self.id}: {self.state.value} -> {new.value}")
        if new is VmState.DISMANTLING and any(a.state is not AppState.STOPPED for a in self.hosted_apps):
            raise IllegalTransitionError(f"vm {self.id}: apps still running")
        self.state = new

    def host(self, app: AppInstance) -> None:
        if self.state is not VmState.RUNNING:
            raise IllegalTransitionError(f"vm {self.id} is {self.state.value}; apps need a RUNNING VM")
        self.hosted_apps.append(app)


@dataclass(frozen=True)
class LatencyConfig:
    """Management-plane latencies in seconds.

    ``t_msg`` is the hop between consecutive workflow messages; keeping it
    positive makes every step of a workflow strictly later than the last.
    """

    t_d: float = 30.0
    t_of: float = 6.0
    t_app: float = 5.5
    t_reconf: float = 1.0
    t_dismantle: float = 10.0
    t_msg: float = 0.05
    t_dpi_verdict: float = 2.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"latency {name} must be finite and >= 0")

    @property
    def scale_up_lead(self) -> float:
        """Decision to FC redirect for a new-VM deployment."""
        return 6 * self.t_msg + self.t_d + self.t_app + self.t_reconf

    @property
    def config_lead(self) -> float:
        """Decision to effect for an offset or model change."""
        return 2 * self.t_msg + self.t_of


@dataclass(frozen=True)
class VmSpec:
    cpus: int
    ram_gb: float
    gpu: bool = False


VM_SPECS = {
    "services": VmSpec(2, 4.0),
    "collector": VmSpec(2, 4.0),
    AppKind.ASD_CPU: VmSpec(4, 4.0),
    AppKind.ASD_GPU: VmSpec(8, 16.0, True),
}

# RAM footprint of a detector: base GB plus GB per million flows/s it receives
RAM_BASE_GB = 1.0
RAM_PER_MFLOW = {AppKind.ASD_CPU: 5.0, AppKind.ASD_GPU: 1.0}


@dataclass(frozen=True)
class Capacity:
    """Physical resources of one RAN's hosts."""

    cpus: int = 24
    ram_gb: float = 48.0
    gpu_slots: int = 1


@dataclass
class Vim:
    """Per-RAN pools of cpus, RAM and GPU slots."""

    capacity: dict[str, Capacity]
    used: dict[str, list[float]] = field(default_factory=dict)

    def _used(self, ran: str) -> list[float]:
        return self.used.setdefault(ran, [0, 0.0, 0])

    def free(self, ran: str) -> tuple[float, float, int]:
        cap = self.capacity.get(ran, Capacity(0, 0.0, 0))
        u = self._used(ran)
        return cap.cpus - u[0], cap.ram_gb - u[1], cap.gpu_slots - u[2]

    def allocate(self, ran: str, cpus: int, ram_gb: float, gpu: bool) -> None:
        fc, fr, fg = self.free(ran)
        if cpus > fc or ram_gb > fr + 1e-9 or (gpu and fg < 1):
            raise WorkflowFailure(
                f"insufficient capacity on {ran}: need cpus={cpus} ram={ram_gb:g} gpu={int(gpu)}, "
                f"free cpus={fc} ram={fr:g} gpu={fg}")
        u = self._used(ran)
        u[0] += cpus
        u[1] += ram_gb
        u[2] += int(gpu)

    def release(self, ran: str, cpus: int, ram_gb: float, gpu: bool) -> None:
        u = self._used(ran)
        u[0] -= cpus
        u[1] -= ram_gb
        u[2] -= int(gpu)


@dataclass
class ModelRegistry:
    """Scripted model releases: ``(available_from_seconds, version, net)``."""

    releases: list[tuple[float, int, NeuralNet]] = field(default_factory=list)

    def add(self, at: float, version: int, net: NeuralNet) -> None:
        self.releases.append((at, version, net))
        self.releases.sort(key=lambda r: (r[0], r[1]))

    def available(self, now: float) -> int | None:
        versions = [v for t, v, _ in self.releases if t <= now]
        return max(versions) if versions else None

    def get(self, version: int) -> NeuralNet:
        for _, v, net in self.releases:
            if v == version:
                return net
        raise KeyError(f"no model version {version}")


@dataclass
class RanState:
    id: str
    fc_app: str
    has_dpi: bool = False
    rate_samples: deque = field(default_factory=lambda: deque(maxlen=32))
    nad_reports: list[dict] = field(default_factory=list)


@dataclass
class ForecastConfig:
    enabled: bool = True
    safety: float = 2.0
    window: int = 5
    time_unit: float = 60.0


class World:
    """Everything the management plane can observe or change."""

    def __init__(self, profiles: dict[AppKind, BackendProfile], vim: Vim, registry: ModelRegistry,
                 collector: CollectorConfig | None = None, forecast_cfg: ForecastConfig | None = None,
                 latencies: LatencyConfig | None = None):
        self.profiles = profiles
        self.vim = vim
        self.registry = registry
        self.collector_cfg = collector or CollectorConfig()
        self.forecast_cfg = forecast_cfg or ForecastConfig()
        self.latencies = latencies or LatencyConfig()
        self.vms: dict[str, VmInstance] = {}
        self.apps: dict[str, AppInstance] = {}
        self.rans: dict[str, RanState] = {}
        self.fc: dict[str, FcService] = {}
        self.asd: dict[str, AsdService] = {}
        self.nad = NadAggregator()
        self.history: list[tuple[float, str, str, AppState]] = []
        self.dpi_verdicts: list[tuple[float, str, str]] = []
        self._ids = itertools.count(1)

    # --- construction -----------------------------------------------------

    def new_id(self, prefix: str) -> str:
        while True:
            rid = f"{prefix}{next(self._ids)}"
            if rid not in self.vms and rid not in self.apps:
                return rid

    def create_vm(self, ran: str, spec: VmSpec, role: str, vm_id: str | None = None) -> VmInstance:
        vm = VmInstance(vm_id or self.new_id(f"{ran}-vm"), ran, spec.cpus, spec.ram_gb, spec.gpu, role)
        self.vms[vm.id] = vm
        return vm

    def start_app(self, vm: VmInstance, kind: AppKind, app_id: str | None = None, **config) -> AppInstance:
        app = AppInstance(app_id or self.new_id(f"{vm.ran_id}-{kind.value.lower()}"), kind, vm.id,
                          vm.ran_id, dict(config))
        vm.host(app)
        self.apps[app.id] = app
        return app

    def make_asd(self, app: AppInstance, now: float) -> AsdService:
        profile = self.profiles[app.kind]
        version = self.registry.available(now)
        net = self.registry.get(version)
        threshold = app.config.get("threshold", net.threshold)
        svc = AsdService(app.id, app.ran_id, profile, profile.best_batch, net, version,
                         self.collector_cfg.t_limit)
        svc.set_threshold(-math.inf, threshold)
        self.asd[app.id] = svc
        app.config.update(backend=profile.name, batch_size=svc.batch_size, threshold=threshold)
        return svc

    def add_ran(self, ran: str, now: float = 0.0) -> RanState:
        """Default RAN layout: services VM, collector VM, CPU detector VM."""
        if ran in self.rans:
            raise ValueError(f"duplicate RAN {ran}")
        vms = []
        for role, spec in (("services", VM_SPECS["services"]), ("collector", VM_SPECS["collector"]),
                           ("asd", VM_SPECS[AppKind.ASD_CPU])):
            self.vim.allocate(ran, spec.cpus, spec.ram_gb, spec.gpu)
            vm = self.create_vm(ran, spec, role, f"{ran}-vm{len(vms) + 1}")
            vm.transition(VmState.DEPLOYING)
            vm.transition(VmState.RUNNING)
            vms.append(vm)
        if not any(a.kind is AppKind.NAD for a in self.apps.values()):
            self.start_app(vms[0], AppKind.NAD, f"{ran}-nad").state = AppState.OK
        asd = self.start_app(vms[2], AppKind.ASD_CPU, f"{ran}-asd1")
        svc = self.make_asd(asd, now)
        asd.state = AppState.OK
        fc_app = self.start_app(vms[1], AppKind.FLOW_COLLECTOR, f"{ran}-fc")
        fc_app.state = AppState.OK
        self.fc[ran] = FcService(ran, self.collector_cfg, asd.id, svc.batch_size, t0=now)
        self.rans[ran] = RanState(ran, fc_app.id)
        self.record(now)
        return self.rans[ran]

    # --- queries ----------------------------------------------------------

    def target_app(self, ran: str) -> AppInstance:
        return self.apps[self.fc[ran].target]

    def record(self, now: float) -> None:
        """Append the detection-continuity state of every RAN."""
        for ran in sorted(self.rans):
            app = self.target_app(ran)
            self.history.append((now, ran, app.id, app.state))

    def app_vm(self, app_id: str) -> VmInstance:
        return self.vms[self.apps[app_id].vm_id]

    def measured_flow_rate(self, ran: str) -> float:
        samples = self.rans[ran].rate_samples
        return samples[-1].rate if samples else 0.0

    def forecast_rate(self, ran: str, horizon_s: float) -> float:
        samples = self.rans[ran].rate_samples
        current = self.measured_flow_rate(ran)
        cfg = self.forecast_cfg
        if not cfg.enabled or len(samples) < 2:
            return current
        slope = estimate_derivative(samples, cfg.window)
        return forecast(current, slope, cfg.safety * horizon_s / cfg.time_unit)

    def add_rate_sample(self, ran: str, t_units: float, rate: float) -> None:
        self.rans[ran].rate_samples.append(RateSample(t_units, rate))


# --- monitoring ------------------------------------------------------------

def _asd_received_rate(world: World, app: AppInstance) -> float:
    fc = world.fc[app.ran_id]
    return world.measured_flow_rate(app.ran_id) if fc.target == app.id else 0.0


def _vm_metrics(world: World, vm: VmInstance) -> dict:
    ram_usage, cpu_usage = 0.2, 0.1
    for app in vm.hosted_apps:
        if app.kind in ASD_KINDS and app.state is not AppState.STOPPED:
            rate = _asd_received_rate(world, app)
            svc = world.asd[app.id]
            offset = world.fc[app.ran_id].offset
            ram_usage = (RAM_BASE_GB + RAM_PER_MFLOW[app.kind] * rate / 1e6) / vm.ram_gb
            cpu_usage = rate / offset / svc.capacity
    return {"id": vm.id, "ran": vm.ran_id, "role": vm.role, "state": vm.state.value, "cpus": vm.cpus,
            "gpu": vm.gpu, "cpu_usage": min(1.0, cpu_usage), "ram_usage": min(1.0, ram_usage),
            "ram_gb": vm.ram_gb}


_APP_FIELDS = ("backend", "offset", "batch_size", "measured_feature_rate", "num_net_flows_per_s",
               "forecast_flow_rate", "forecast_flow_rate_of", "sustainable_flow_rate", "utilization",
               "forecast_utilization", "forecast_utilization_of", "is_fc_target", "threshold")


def _app_metrics(world: World, app: AppInstance, now: float, period: float) -> dict:
    row: dict[str, Any] = {"id": app.id, "ran": app.ran_id, "vm": app.vm_id, "kind": app.kind.value,
                           "state": app.state.value}
    row.update(dict.fromkeys(_APP_FIELDS))
    fc = world.fc.get(app.ran_id)
    if app.kind is AppKind.FLOW_COLLECTOR and fc is not None:
        row.update(offset=fc.offset, measured_feature_rate=fc.measured_feature_rate(now, period),
                   num_net_flows_per_s=world.measured_flow_rate(app.ran_id))
    elif app.kind in ASD_KINDS:
        svc = world.asd[app.id]
        lat = world.latencies
        target = fc.target == app.id
        offset = fc.offset
        rate = _asd_received_rate(world, app)
        if target:
            fr = world.forecast_rate(app.ran_id, lat.scale_up_lead)
            fr_of = world.forecast_rate(app.ran_id, lat.config_lead)
            feat = fc.measured_feature_rate(now, period)
        else:
            fr = fr_of = feat = 0.0
        cap = svc.capacity
        available = world.registry.available(now)
        row.update(backend=svc.profile.name, offset=offset, batch_size=svc.batch_size,
                   measured_feature_rate=feat, num_net_flows_per_s=rate,
                   forecast_flow_rate=fr, forecast_flow_rate_of=fr_of,
                   sustainable_flow_rate=max_sustainable_rate(svc.pipeline(offset)),
                   utilization=rate / offset / cap, forecast_utilization=fr / offset / cap,
                   forecast_utilization_of=fr_of / offset / cap, is_fc_target=target,
                   threshold=svc.threshold, model_version=svc.model_version,
                   available_model_version=available,
                   is_improved=available is not None and available > svc.model_version)
    return row


def snapshot(world: World, now: float, period: float = 3.0,
             locked: set[str] | frozenset[str] = frozenset()) -> MonitoringSnapshot:
    """Consistent point-in-time view; ``period`` is the rate-measurement window in seconds.

    NAD reports accumulated since the previous snapshot are consumed.
    """
    vms = {v.id: _vm_metrics(world, v) for v in world.vms.values() if v.state is not VmState.GONE}
    apps = {a.id: _app_metrics(world, a, now, period) for a in world.apps.values()
            if a.state is not AppState.STOPPED}
    rans, outputs = {}, []
    for rid, ran in sorted(world.rans.items()):
        fc = world.fc[rid]
        rans[rid] = {"id": rid, "flow_rate": world.measured_flow_rate(rid),
                     "forecast_rate": world.forecast_rate(rid, world.latencies.scale_up_lead),
                     "feature_rate": fc.measured_feature_rate(now, period), "has_dpi": ran.has_dpi}
        outputs += ran.nad_reports
        ran.nad_reports = []
    return MonitoringSnapshot(now, vms, apps, rans, tuple(outputs), frozenset(locked))


# --- workflows ---------------------------------------------------------------

class WorkflowStatus(str, enum.Enum):
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class WorkflowEvent:
    time: float
    workflow_id: str
    step: int
    actor: str
    description: str

    def line(self) -> str:
        return f"{self.time:.6f}\t{self.workflow_id}\t{self.step}\t{self.actor}\t{self.description}"


Effect = Callable[[float], "str | None"]
Step = tuple[float, int, str, str, "Effect | None"]


@dataclass
class WorkflowState:
    workflow_id: str
    action: ActionRequest
    step: int
    started_at: float
    deadline: float
    pending_waits: set[str] = field(default_factory=set)
    status: WorkflowStatus = WorkflowStatus.RUNNING
    locks: set[str] = field(default_factory=set)
    events: list[WorkflowEvent] = field(default_factory=list)
    error: str | None = None
    next_time: float | None = None

    @property
    def finished_at(self) -> float | None:
        return self.events[-1].time if self.status is not WorkflowStatus.RUNNING else None


class Orchestrator:
    """Turns resolved actions into timed workflows against a :class:`World`."""

    MAX_STEPS = 14

    def __init__(self, world: World, queue: EventQueue | None = None,
                 latencies: LatencyConfig | None = None, augment_in_place: bool = False):
        self.world = world
        self.queue = queue if queue is not None else EventQueue()
        self.latencies = latencies or world.latencies
        world.latencies = self.latencies
        self.augment_in_place = augment_in_place
        self.workflows: dict[str, WorkflowState] = {}
        self.log: list[WorkflowEvent] = []
        self._gens: dict[str, Iterator[Step]] = {}
        self._pending: dict[str, Step] = {}
        self._ids = itertools.count(1)

    # --- locks ----------------------------------------------------------------

    @property
    def locked(self) -> set[str]:
        ids: set[str] = set()
        for wf in self.workflows.values():
            if wf.status is WorkflowStatus.RUNNING:
                ids |= wf.locks
        return ids

    def _resources(self, action: ActionRequest) -> set[str]:
        ids = {action.target}
        for key in ("replaces", "host", "new_target"):
            if (v := action.param(key)) is not None:
                ids.add(str(v))
        for rid in list(ids):
            if rid in self.world.apps:
                ids.add(self.world.apps[rid].vm_id)
        return ids

    # --- public API -----------------------------------------------------------

    def enact(self, action: ActionRequest, now: float) -> WorkflowState:
        """Start the workflow for ``action``; its first step runs immediately."""
        wanted = self._resources(action)
        if busy := wanted & self.locked:
            raise ResourceLockedError(f"{action}: resources {sorted(busy)} are locked")
        return self._start(action, lambda wf: self._workflow(action, wf), now, wanted)

    def apply_config_change(self, target: str, change: dict, now: float) -> WorkflowState:
        """Apply ``new_offset``, ``new_model`` or ``new_threshold`` to an app after ``t_of``."""
        app = self.world.apps.get(target)
        if app is None or app.state is AppState.STOPPED:
            raise ConfigTargetError(f"config change target {target} is not running")
        unknown = set(change) - {"new_offset", "new_model", "new_threshold"}
        if unknown or len(change) != 1:
            raise ValueError(f"expected exactly one of new_offset/new_model/new_threshold, got {sorted(change)}")
        action = ActionRequest.make("SET_OFFSET" if "new_offset" in change else "UPDATE_MODEL", target,
                                    **{k: v for k, v in change.items() if k == "new_offset"})
        if busy := self._resources(action) & self.locked:
            raise ResourceLockedError(f"{target}: resources {sorted(busy)} are locked")

        def gen():
            yield (self.latencies.t_of, 8, "APP", f"config {change} applied to {target}",
                   lambda t: self._apply_change(target, change, t))

        return self._start(action, lambda wf: gen(), now, self._resources(action))

    def handle(self, event: Event) -> None:
        """Execute the workflow step carried by a ``WORKFLOW_STEP`` event."""
        wf_id = event.payload
        wf = self.workflows[wf_id]
        if wf.status is not WorkflowStatus.RUNNING:
            return
        self._execute(wf, self._pending.pop(wf_id), event.time)

    def run(self, until: float = math.inf) -> None:
        """Drain workflow events when the orchestrator owns its queue."""
        while len(self.queue) and self.queue.peek_time() <= until:
            ev = self.queue.pop()
            if ev.kind is EventKind.WORKFLOW_STEP:
                self.handle(ev)

    def running(self) -> list[WorkflowState]:
        return [w for w in self.workflows.values() if w.status is WorkflowStatus.RUNNING]

    # --- engine ---------------------------------------------------------------

    def _start(self, action, make_gen, now, locks) -> WorkflowState:
        wf_id = f"wf{next(self._ids)}"
        wf = WorkflowState(wf_id, action, 0, now, now, locks=set(locks))
        self.workflows[wf_id] = wf
        self._gens[wf_id] = make_gen(wf)
        self._advance(wf, now)
        return wf

    def _advance(self, wf: WorkflowState, now: float) -> None:
        try:
            item = next(self._gens[wf.workflow_id])
        except StopIteration:
            self._finish(wf, WorkflowStatus.SUCCEEDED)
            return
        delay = item[0]
        if delay == 0:
            self._execute(wf, item, now)
            return
        wf.next_time = now + delay
        wf.deadline = max(wf.deadline, wf.next_time)
        self._pending[wf.workflow_id] = item
        self.queue.schedule(now + delay, EventKind.WORKFLOW_STEP, wf.workflow_id)

    def _execute(self, wf: WorkflowState, item: Step, now: float) -> None:
        _, step, actor, desc, effect = item
        if step < wf.step:
            raise RuntimeError(f"{wf.workflow_id}: step {step} after step {wf.step}")
        wf.step = step
        failed = None
        if effect is not None:
            try:
                note = effect(now)
                if note:
                    desc = f"{desc}: {note}"
            except WorkflowFailure as exc:
                failed = str(exc)
                desc = f"{desc}: FAILED ({exc})"
        ev = WorkflowEvent(now, wf.workflow_id, step, actor, desc)
        wf.events.append(ev)
        self.log.append(ev)
        self.world.record(now)
        if failed is not None:
            wf.error = failed
            self._finish(wf, WorkflowStatus.FAILED)
            return
        self._advance(wf, now)

    def _finish(self, wf: WorkflowState, status: WorkflowStatus) -> None:
        wf.status = status
        wf.next_time = None
        wf.pending_waits.clear()
        self._gens.pop(wf.workflow_id, None)
        self._pending.pop(wf.workflow_id, None)

    # --- workflow definitions ------------------------------------------------

    def _workflow(self, action: ActionRequest, wf: WorkflowState) -> Iterator[Step]:
        k = action.kind
        if k is ActionKind.DEPLOY_ME_APP:
            kind = AppKind(action.param("app_kind"))
            if kind is AppKind.DPI:
                return self._wf_dpi(action)
            if kind in ASD_KINDS:
                return self._wf_scale(action, kind, wf)
            raise ValueError(f"cannot deploy app kind {kind.value}")
        if k is ActionKind.DEPLOY_DPI:
            return self._wf_dpi(action)
        if k is ActionKind.INCREASE_RAM:
            return self._wf_ram(action)
        if k in (ActionKind.UPDATE_MODEL, ActionKind.SET_OFFSET):
            return self._wf_config(action)
        if k is ActionKind.DISMANTLE_VM:
            return self._wf_dismantle(action)
        if k is ActionKind.RECONFIGURE_FC:
            return self._wf_reconfigure(action)
        return self._wf_noop(action)

    def _ran_of(self, target: str) -> str:
        w = self.world
        if target in w.rans:
            return target
        if target in w.apps:
            return w.apps[target].ran_id
        if target in w.vms:
            return w.vms[target].ran_id
        raise WorkflowFailure(f"unknown resource {target}")

    def _wf_noop(self, action):
        yield (0, 1, "DECISION", f"policy decision {action} (no-op)", None)

    def _wf_scale(self, action: ActionRequest, kind: AppKind, wf: WorkflowState):
        lat, w = self.latencies, self.world
        m = lat.t_msg
        ran = self._ran_of(action.target)
        old_app_id = action.param("replaces")
        old_app = w.apps.get(old_app_id) if old_app_id else None
        state: dict[str, Any] = {}
        spec = VM_SPECS[kind]
        in_place = self.augment_in_place and old_app is not None

        lock = wf.locks.add

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (m, 2, "ORCH", f"request resources for {kind.value} on {ran}", None)
        if in_place:
            vm = w.app_vm(old_app.id)
            extra = VmSpec(max(0, spec.cpus - vm.cpus), max(0.0, spec.ram_gb - vm.ram_gb), spec.gpu)

            def check(t):
                w.vim.allocate(ran, extra.cpus, extra.ram_gb, extra.gpu)
                return f"{extra.cpus} cpus, {extra.ram_gb:g} GB, gpu={int(extra.gpu)} reserved"

            def augment(t):
                vm.cpus += extra.cpus
                vm.ram_gb += extra.ram_gb
                vm.gpu = vm.gpu or extra.gpu
                state["vm"] = vm
                return f"{vm.id} augmented in place"

            yield (m, 4, "VIM", "capacity check", check)
            yield (lat.t_d, 5, "VIM", "VM resources added", augment)
        else:
            def instantiate(t):
                vm = w.create_vm(ran, spec, "asd")
                state["vm"] = vm
                lock(vm.id)
                return f"{vm.id} REQUESTED"

            def check(t):
                vm = state["vm"]
                try:
                    w.vim.allocate(ran, vm.cpus, vm.ram_gb, vm.gpu)
                except WorkflowFailure:
                    vm.state = VmState.GONE
                    raise
                vm.transition(VmState.DEPLOYING)
                return f"{vm.id} DEPLOYING"

            def running(t):
                state["vm"].transition(VmState.RUNNING)
                return f"{state['vm'].id} RUNNING"

            yield (m, 3, "VIM", "instantiate VM", instantiate)
            yield (m, 4, "VIM", "capacity check", check)
            yield (lat.t_d, 5, "VIM", "VM deployed", running)

        def start(t):
            app = w.start_app(state["vm"], kind)
            if old_app is not None:
                app.config["threshold"] = w.asd[old_app.id].threshold
            w.make_asd(app, t)
            state["app"] = app
            lock(app.id)
            return f"{app.id} STARTING on {state['vm'].id}"

        def ok(t):
            state["app"].transition(AppState.OK)
            return f"{state['app'].id} OK"

        yield (m, 6, "ORCH", f"request {kind.value} instantiation", None)
        yield (m, 7, "MEPM", "start app", start)
        yield (lat.t_app, 8, "APP", "app started", ok)

        def redirect(t):
            app = state["app"]
            w.fc[ran].redirect(t, app.id, w.asd[app.id].batch_size)
            return f"collector output now sent to {app.id}"

        yield (m, 9, "ORCH", f"request FC reconfiguration on {ran}", None)
        yield (lat.t_reconf, 10, "MEPM", "FC reconfigured", redirect)
        yield (m, 11, "MEPM", "FC reconfiguration confirmed", None)
        if old_app is None:
            return

        def stop(t):
            old_app.transition(AppState.STOPPED)
            if in_place:
                return f"{old_app.id} STOPPED"
            vm = w.app_vm(old_app.id)
            vm.transition(VmState.DISMANTLING)
            return f"{old_app.id} STOPPED, {vm.id} DISMANTLING"

        def gone(t):
            vm = w.app_vm(old_app.id)
            vm.transition(VmState.GONE)
            w.vim.release(ran, vm.cpus, vm.ram_gb, vm.gpu)
            return f"{vm.id} GONE"

        yield (m, 12, "ORCH", f"request dismantle of {old_app.id}", None)
        yield (m, 13, "MEPM", "stop old app", stop)
        if not in_place:
            yield (lat.t_dismantle, 14, "VIM", "VM dismantled", gone)

    def _wf_dpi(self, action: ActionRequest):
        w, lat = self.world, self.latencies
        m = lat.t_msg
        ran = self._ran_of(action.target)
        host = action.param("host") or next(
            (v.id for v in w.vms.values() if v.ran_id == ran and v.role == "services"
             and v.state is VmState.RUNNING), None)
        state = {}

        def start(t):
            if host is None or w.vms[host].state is not VmState.RUNNING:
                raise WorkflowFailure(f"no running services VM on {ran}")
            state["app"] = w.start_app(w.vms[host], AppKind.DPI)
            return f"{state['app'].id} STARTING on {host}"

        def ok(t):
            state["app"].transition(AppState.OK)
            w.rans[ran].has_dpi = True
            return f"{state['app'].id} OK"

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (m, 2, "ORCH", f"deploy DPI on {ran}", None)
        yield (m, 6, "ORCH", "request DPI instantiation", None)
        yield (m, 7, "MEPM", "start app", start)
        yield (lat.t_app, 8, "APP", "DPI started", ok)

    def _wf_ram(self, action: ActionRequest):
        w, lat = self.world, self.latencies
        vm = w.vms.get(action.target)
        delta = float(action.param("ram_delta"))

        def check(t):
            if vm is None or vm.state is not VmState.RUNNING:
                raise WorkflowFailure(f"{action.target} is not a running VM")
            w.vim.allocate(vm.ran_id, 0, delta, False)
            return f"{delta:g} GB reserved"

        def grow(t):
            vm.ram_gb += delta
            return f"{vm.id} ram_gb={vm.ram_gb:g}"

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (lat.t_msg, 2, "ORCH", f"request RAM for {action.target}", None)
        yield (lat.t_msg, 4, "VIM", "capacity check", check)
        yield (lat.t_of, 5, "VIM", "RAM added without restart", grow)

    def _wf_config(self, action: ActionRequest):
        lat = self.latencies
        target = action.target
        if action.kind is ActionKind.UPDATE_MODEL:
            change = {"new_model": action.param("model")}
        elif action.param("new_offset") is not None:
            change = {"new_offset": int(action.param("new_offset"))}
        else:
            change = {"offset_factor": action.param("offset_factor")}

        def apply(t):
            return self._apply_change(target, change, t)

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (lat.t_msg, 2, "ORCH", f"forward configuration of {target}", None)
        yield (lat.t_msg, 6, "MEPM", "push configuration", None)
        yield (lat.t_of, 8, "APP", "configuration applied", apply)

    def _apply_change(self, target: str, change: dict, t: float) -> str:
        w = self.world
        app = w.apps.get(target)
        if app is None or app.state is AppState.STOPPED:
            raise WorkflowFailure(f"{target} is not running")
        fc = w.fc[app.ran_id]
        if "offset_factor" in change:
            change = {"new_offset": max(1, int(round(fc.offset * float(change["offset_factor"]))))}
        if "new_offset" in change:
            fc.set_offset(t, int(change["new_offset"]))
            app.config["offset"] = fc.offset
            return f"offset={fc.offset}"
        if app.kind not in ASD_KINDS:
            raise WorkflowFailure(f"{target} has no detection model")
        svc = w.asd[target]
        if "new_model" in change:
            version = change["new_model"]
            if version is None:
                raise WorkflowFailure("no model available")
            svc.set_model(t, w.registry.get(int(version)), int(version))
            return f"model v{svc.model_version}"
        thr = float(change["new_threshold"])
        if not 0 < thr < 1:
            raise WorkflowFailure("threshold must lie in (0, 1)")
        svc.set_threshold(t, thr)
        app.config["threshold"] = thr
        return f"threshold={thr:g}"

    def _wf_dismantle(self, action: ActionRequest):
        w, lat = self.world, self.latencies
        vm = w.vms.get(action.target)

        def check(t):
            if vm is None or vm.state is not VmState.RUNNING:
                raise WorkflowFailure(f"{action.target} is not a running VM")
            targets = {w.fc[r].target for r in w.rans}
            if any(a.id in targets or a.kind is AppKind.FLOW_COLLECTOR for a in vm.hosted_apps):
                raise WorkflowFailure(f"{vm.id} hosts the active detection pipeline")

        def stop(t):
            for app in vm.hosted_apps:
                if app.state is not AppState.STOPPED:
                    app.transition(AppState.STOPPED)
            vm.transition(VmState.DISMANTLING)
            return f"{vm.id} DISMANTLING"

        def gone(t):
            vm.transition(VmState.GONE)
            w.vim.release(vm.ran_id, vm.cpus, vm.ram_gb, vm.gpu)
            return f"{vm.id} GONE"

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (lat.t_msg, 2, "ORCH", f"dismantle {action.target}", None)
        yield (lat.t_msg, 12, "ORCH", "request dismantle", check)
        yield (lat.t_msg, 13, "MEPM", "stop apps", stop)
        yield (lat.t_dismantle, 14, "VIM", "VM dismantled", gone)

    def _wf_reconfigure(self, action: ActionRequest):
        w, lat = self.world, self.latencies
        ran = self._ran_of(action.target)
        new = str(action.param("new_target"))

        def redirect(t):
            app = w.apps.get(new)
            if app is None or app.kind not in ASD_KINDS or app.state is not AppState.OK:
                raise WorkflowFailure(f"{new} is not a running detector")
            w.fc[ran].redirect(t, new, w.asd[new].batch_size)
            return f"collector output now sent to {new}"

        yield (0, 1, "DECISION", f"policy decision {action}", None)
        yield (lat.t_msg, 2, "ORCH", f"reconfigure FC on {ran}", None)
        yield (lat.t_msg, 9, "ORCH", "request FC reconfiguration", None)
        yield (lat.t_reconf, 10, "MEPM", "FC reconfigured", redirect)
        yield (lat.t_msg, 11, "MEPM", "FC reconfiguration confirmed", None)
