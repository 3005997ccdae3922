import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecad.detection import classify_batch, init_network
from mecad.flows import CollectorConfig, FeatureBatch, FeatureVector, FlowGenerator, FlowRecord
from mecad.orchestration import (AppInstance, AppKind, AppState, Capacity, ConfigTargetError,
                                 IllegalTransitionError, LatencyConfig, ModelRegistry, Orchestrator,
                                 ResourceLockedError, Vim, VmInstance, VmState, WorkflowStatus, World,
                                 snapshot)
from mecad.perf import CPU_TF, GPU_CAFFE2
from mecad.policy import ActionRequest

LAT = LatencyConfig()
GPU_DEPLOY = ActionRequest.make("DEPLOY_ME_APP", "ran-1", app_kind="ASD_GPU", replaces="ran-1-asd1")


def make_world(capacity=None, offset=1, versions=1):
    reg = ModelRegistry()
    for v in range(1, versions + 1):
        reg.add(-math.inf, v, init_network([288, 16, 8, 4, 1], seed=v))
    world = World({AppKind.ASD_CPU: CPU_TF, AppKind.ASD_GPU: GPU_CAFFE2},
                  Vim({"ran-1": capacity or Capacity()}), reg, CollectorConfig(offset=offset))
    world.add_ran("ran-1")
    return world


def even_flows(rate, t0, t1):
    n = int(round(rate * (t1 - t0)))
    return [FlowRecord(t0 + i / rate, "h", "s", 1000, 80, "tcp", 100, 2, 0.1) for i in range(n)]


def steps(wf):
    return [e.step for e in wf.events]


# --- snapshots ----------------------------------------------------------------

def test_empty_world_snapshot():
    world = World({}, Vim({}), ModelRegistry())
    s = snapshot(world, 12.5)
    assert s.time == 12.5
    assert not s.vms and not s.apps and not s.rans and s.nad_outputs == ()


def test_default_layout_snapshot():
    s = snapshot(make_world(), 0.0)
    assert set(s.vms) == {"ran-1-vm1", "ran-1-vm2", "ran-1-vm3"}
    assert s.apps["ran-1-asd1"]["is_fc_target"] is True
    assert s.apps["ran-1-asd1"]["model_version"] == 1
    for vm in s.vms.values():
        assert 0 <= vm["ram_usage"] <= 1 and 0 <= vm["cpu_usage"] <= 1


def test_measured_feature_rate_at_offset_two():
    world = make_world(offset=2)
    fc = world.fc["ran-1"]
    rng = np.random.default_rng(0)
    gen = FlowGenerator(rng)
    for k in range(3):
        a, b = 3.0 * k, 3.0 * (k + 1)
        fc.ingest_flows(gen.generate(int(rng.poisson(3000)), a, b), a, b)
    s = snapshot(world, 9.0, period=3.0)
    assert s.apps["ran-1-fc"]["measured_feature_rate"] == pytest.approx(500, rel=0.02)


def test_nad_reports_consumed_once():
    world = make_world()
    world.rans["ran-1"].nad_reports.append({"anomaly_type": "SUSPICIOUS_CC", "suspicious_cc": True,
                                            "ran": "ran-1", "count": 3})
    assert len(snapshot(world, 1.0).nad_outputs) == 1
    assert snapshot(world, 2.0).nad_outputs == ()


# --- state machines -------------------------------------------------------------

def test_illegal_vm_transitions():
    vm = VmInstance("v", "r", 2, 4.0)
    with pytest.raises(IllegalTransitionError):
        vm.transition(VmState.RUNNING)
    with pytest.raises(IllegalTransitionError):
        vm.host(AppInstance("a", AppKind.DPI, "v", "r"))
    vm.transition(VmState.DEPLOYING)
    vm.transition(VmState.RUNNING)
    app = AppInstance("a", AppKind.DPI, "v", "r")
    vm.host(app)
    with pytest.raises(IllegalTransitionError):
        vm.transition(VmState.DISMANTLING)
    app.transition(AppState.STOPPED)
    vm.transition(VmState.DISMANTLING)
    with pytest.raises(IllegalTransitionError):
        vm.transition(VmState.RUNNING)


def test_illegal_app_transition():
    app = AppInstance("a", AppKind.NAD, "v", "r", state=AppState.STOPPED)
    with pytest.raises(IllegalTransitionError):
        app.transition(AppState.OK)


def test_latency_validation():
    with pytest.raises(ValueError):
        LatencyConfig(t_d=-1)
    assert LAT.scale_up_lead == pytest.approx(6 * 0.05 + 30 + 5.5 + 1)
    assert LAT.config_lead == pytest.approx(6.1)


# --- scale-up workflow -----------------------------------------------------------

def test_happy_path_steps_one_to_fourteen():
    world = make_world()
    orch = Orchestrator(world)
    wf = orch.enact(GPU_DEPLOY, 100.0)
    orch.run()
    assert wf.status is WorkflowStatus.SUCCEEDED
    assert steps(wf) == list(range(1, 15))
    times = [e.time for e in wf.events]
    assert all(b > a for a, b in zip(times, times[1:]))
    # step 5 lands t_d after the capacity check, step 8 t_app after the start
    assert times[4] - times[3] == pytest.approx(LAT.t_d)
    assert times[7] - times[6] == pytest.approx(LAT.t_app)
    new = world.target_app("ran-1")
    assert new.kind is AppKind.ASD_GPU and new.state is AppState.OK
    assert world.apps["ran-1-asd1"].state is AppState.STOPPED
    assert world.vms["ran-1-vm3"].state is VmState.GONE
    assert orch.locked == set()
    assert times[9] == pytest.approx(100.0 + LAT.scale_up_lead)


def test_detection_continuity_during_scale_up():
    world = make_world()
    orch = Orchestrator(world)
    orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    assert world.history
    assert all(state is AppState.OK for _, _, _, state in world.history)
    targets = [app for _, _, app, _ in world.history]
    assert targets[0] == "ran-1-asd1" and targets[-1] != "ran-1-asd1"


def test_capacity_failure_leaves_old_pipeline():
    world = make_world(capacity=Capacity(cpus=24, ram_gb=48, gpu_slots=0))
    used_before = list(world.vim.used["ran-1"])
    orch = Orchestrator(world)
    wf = orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    assert wf.status is WorkflowStatus.FAILED
    assert wf.events[-1].step == 4 and "capacity" in wf.error
    assert world.apps["ran-1-asd1"].state is AppState.OK
    assert world.vms["ran-1-vm3"].state is VmState.RUNNING
    assert world.vim.used["ran-1"] == used_before
    assert orch.locked == set()
    # the old detector keeps receiving the collector's output
    fc = world.fc["ran-1"]
    vectors, _ = fc.ingest_flows(even_flows(100, 50.0, 51.0), 50.0, 51.0)
    assert vectors and fc.target_at(50.5) == "ran-1-asd1"


def test_second_workflow_on_locked_resource_rejected():
    world = make_world()
    orch = Orchestrator(world)
    orch.enact(GPU_DEPLOY, 0.0)
    assert {"ran-1", "ran-1-asd1", "ran-1-vm3"} <= orch.locked
    with pytest.raises(ResourceLockedError):
        orch.enact(ActionRequest.make("INCREASE_RAM", "ran-1-vm3", ram_delta=4), 1.0)
    orch.run()
    orch.enact(ActionRequest.make("RECONFIGURE_FC", "ran-1", new_target=world.fc["ran-1"].target), 200.0)


def test_augment_in_place():
    world = make_world()
    orch = Orchestrator(world, augment_in_place=True)
    wf = orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    assert wf.status is WorkflowStatus.SUCCEEDED
    assert steps(wf) == [1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13]
    vm = world.vms["ran-1-vm3"]
    assert vm.state is VmState.RUNNING and vm.gpu and vm.cpus == 8 and vm.ram_gb == 16
    new = world.target_app("ran-1")
    assert new.vm_id == "ran-1-vm3" and new.kind is AppKind.ASD_GPU
    assert world.apps["ran-1-asd1"].state is AppState.STOPPED


@settings(max_examples=30, deadline=None)
@given(lat=st.tuples(*[st.floats(0.001, 60.0)] * 5), msg=st.floats(0.001, 1.0))
def test_step_order_under_random_latencies(lat, msg):
    latencies = LatencyConfig(*lat, t_msg=msg)
    world = make_world()
    orch = Orchestrator(world, latencies=latencies)
    wf = orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    assert steps(wf) == list(range(1, 15))
    times = [e.time for e in wf.events]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert all(s is AppState.OK for *_, s in world.history)


# --- other workflows ------------------------------------------------------------

def test_increase_ram_no_restart():
    world = make_world()
    orch = Orchestrator(world)
    wf = orch.enact(ActionRequest.make("INCREASE_RAM", "ran-1-vm3", ram_delta=4), 10.0)
    orch.run(until=10.0 + 2 * LAT.t_msg + LAT.t_of - 1e-6)
    assert world.vms["ran-1-vm3"].ram_gb == 4.0
    orch.run()
    assert steps(wf) == [1, 2, 4, 5]
    assert wf.finished_at == pytest.approx(10.0 + 2 * LAT.t_msg + LAT.t_of)
    assert world.vms["ran-1-vm3"].ram_gb == 8.0
    assert world.vms["ran-1-vm3"].state is VmState.RUNNING
    assert world.apps["ran-1-asd1"].state is AppState.OK


def test_set_offset_effective_time():
    world = make_world()
    orch = Orchestrator(world)
    orch.apply_config_change("ran-1-asd1", {"new_offset": 2}, 10.0)
    orch.run()
    fc = world.fc["ran-1"]
    assert fc.offsets.at(10.0 + LAT.t_of - 1e-9) == 1 and fc.offsets.at(10.0 + LAT.t_of) == 2
    counts = {}
    for a, b in fc.segments(10.0, 20.0):
        vectors, _ = fc.ingest_flows(even_flows(1000, a, b), a, b)
        counts[(a, b)] = len(vectors)
    assert counts == {(10.0, 16.0): 6000, (16.0, 20.0): 2000}


def test_update_model_keeps_queued_batches():
    world = make_world(versions=2)
    orch = Orchestrator(world)
    svc = world.asd["ran-1-asd1"]
    rng = np.random.default_rng(0)
    for i in range(20):
        vecs = tuple(FeatureVector(rng.normal(size=288), 0.01 * i, 0.01 * i, "ran-1") for _ in range(4))
        svc.submit(FeatureBatch(vecs, 0.01 * i, 0.01 * i, False))
    orch.apply_config_change("ran-1-asd1", {"new_model": 2}, 0.0)
    for now in np.linspace(0.0, 0.3, 31):
        orch.run(until=now)
        svc.collect(now)
        assert svc.batches_in == svc.batches_evaluated + svc.queued(now)
    assert svc.batches_evaluated == 20 and svc.model_version == 2


def test_threshold_change_never_adds_symptoms():
    world = make_world()
    orch = Orchestrator(world)
    svc = world.asd["ran-1-asd1"]
    net = world.registry.get(1)
    rng = np.random.default_rng(1)
    vecs = tuple(FeatureVector(rng.normal(size=288) * 50, 0.0, 0.0, "ran-1") for _ in range(200))
    batch = FeatureBatch(vecs, 0.0, 0.0, False)
    orch.apply_config_change("ran-1-asd1", {"new_threshold": 0.5}, 0.0)
    orch.run()
    low = len(classify_batch(net, batch, svc.threshold))
    orch.apply_config_change("ran-1-asd1", {"new_threshold": 0.9}, 10.0)
    orch.run()
    assert svc.threshold == 0.9
    assert len(classify_batch(net, batch, svc.threshold)) <= low


@settings(max_examples=50, deadline=None)
@given(t1=st.floats(0.01, 0.98), gap=st.floats(0.0, 0.5), seed=st.integers(0, 100))
def test_threshold_monotonicity(t1, gap, seed):
    t2 = min(0.99, t1 + gap)
    net = init_network([8, 4, 1], seed=seed)
    x = np.random.default_rng(seed).normal(size=(30, 8)) * 3
    vecs = [FeatureVector(row, 0.0, 0.0) for row in x]
    assert len(classify_batch(net, vecs, t2)) <= len(classify_batch(net, vecs, t1))


def test_config_change_on_stopped_target():
    world = make_world()
    orch = Orchestrator(world)
    orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    with pytest.raises(ConfigTargetError):
        orch.apply_config_change("ran-1-asd1", {"new_offset": 2}, 100.0)


def test_dismantle_refuses_active_pipeline():
    world = make_world()
    orch = Orchestrator(world)
    wf = orch.enact(ActionRequest.make("DISMANTLE_VM", "ran-1-vm3"), 0.0)
    orch.run()
    assert wf.status is WorkflowStatus.FAILED and wf.events[-1].step == 12
    assert world.vms["ran-1-vm3"].state is VmState.RUNNING


def test_dpi_deployment():
    world = make_world()
    orch = Orchestrator(world)
    wf = orch.enact(ActionRequest.make("DEPLOY_ME_APP", "ran-1", app_kind="DPI"), 0.0)
    orch.run()
    assert steps(wf) == [1, 2, 6, 7, 8]
    assert world.rans["ran-1"].has_dpi
    dpi = [a for a in world.apps.values() if a.kind is AppKind.DPI]
    assert len(dpi) == 1 and dpi[0].vm_id == "ran-1-vm1"


def test_log_lines_are_tab_separated():
    world = make_world()
    orch = Orchestrator(world)
    orch.enact(GPU_DEPLOY, 0.0)
    orch.run()
    for ev in orch.log:
        fields = ev.line().split("\t")
        assert len(fields) == 5
        assert float(fields[0]) == pytest.approx(ev.time, abs=1e-6) and int(fields[2]) == ev.step
        assert fields[3] in {"DECISION", "ORCH", "VIM", "MEPM", "VI", "APP"}
