"""The four-concern use case: RAM pressure, model refresh, GPU scale-up and C&C response.

Each shipped policy has a scripted trigger point derived analytically from
the scenario, and an independent predicate over monitoring snapshots.
:func:`check_triggers` confirms every policy fired at the first tick where
its predicate held, and not before its scripted point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import data_path, load_config
from .orchestration import RAM_BASE_GB, RAM_PER_MFLOW, VM_SPECS, AppKind
from .policy import MonitoringSnapshot
from .sim import SimConfig, Simulation


def inverse_ramp(config: SimConfig, rate: float) -> float:
    """Time (units) at which the sigmoid ramp reaches ``rate``."""
    sc = config.scenario
    if not 0 < rate < sc.saturation:
        return math.inf
    return sc.midpoint + math.log(rate / (sc.saturation - rate))


def scripted_triggers(config: SimConfig) -> dict[str, float]:
    """Analytic earliest firing time, in time units, of each use-case policy."""
    th = config.thresholds
    ram_gb = VM_SPECS[AppKind.ASD_CPU].ram_gb
    ram_rate = (th["RamUsageMax"] * ram_gb - RAM_BASE_GB) / RAM_PER_MFLOW[AppKind.ASD_CPU] * 1e6
    injections = [i.start for i in config.scenario.injections if i.fraction > 0]
    return {
        "vi-increase-ram": inverse_ramp(config, ram_rate),
        "adf-update-model": config.model_releases[0] if config.model_releases else math.inf,
        "meapp-gpu-asd": inverse_ramp(config, th["NetFlowsMaxForCpu"]),
        "meapp-dpi-cc": min(injections) if injections else math.inf,
    }


def condition_oracle(snap: MonitoringSnapshot, thresholds: dict) -> set[str]:
    """Policies whose conditions hold in ``snap``, checked directly on the tables."""
    held = set()
    for app in snap.apps.values():
        if app["kind"] != "ASD_CPU":
            continue
        vm = snap.vms.get(app["vm"])
        if vm is not None and vm["ram_usage"] >= thresholds["RamUsageMax"]:
            held.add("vi-increase-ram")
        if app["is_fc_target"] and app["num_net_flows_per_s"] >= thresholds["NetFlowsMaxForCpu"]:
            held.add("meapp-gpu-asd")
    for app in snap.apps.values():
        if app.get("is_improved"):
            held.add("adf-update-model")
    for out in snap.nad_outputs:
        ran = snap.rans.get(out["ran"])
        if out["suspicious_cc"] and ran is not None and not ran["has_dpi"]:
            held.add("meapp-dpi-cc")
    return held


@dataclass(frozen=True)
class TriggerCheck:
    policy: str
    scripted: float
    first_condition: float | None
    first_fired: float | None

    @property
    def ok(self) -> bool:
        if self.first_fired is None or self.first_condition is None:
            return False
        return (math.isclose(self.first_fired, self.first_condition, abs_tol=1e-9)
                and self.first_fired >= self.scripted - 1e-9)


def check_triggers(sim: Simulation) -> list[TriggerCheck]:
    cfg = sim.config
    unit = cfg.scenario.time_unit
    first_cond: dict[str, float] = {}
    for snap in sim.snapshots:
        for pid in condition_oracle(snap, cfg.thresholds):
            first_cond.setdefault(pid, snap.time / unit)
    first_fired: dict[str, float] = {}
    for t, pid, _ in sim.engine.firings:
        first_fired.setdefault(pid, t / unit)
    return [TriggerCheck(pid, t, first_cond.get(pid), first_fired.get(pid))
            for pid, t in scripted_triggers(cfg).items()]


def usecase_config(seed: int | None = None) -> SimConfig:
    cfg = load_config(data_path("usecase.json"))
    if seed is not None:
        cfg.seed = seed
    return cfg


def run_usecase(seed: int | None = None) -> Simulation:
    sim = Simulation(usecase_config(seed))
    sim.run_until()
    return sim
