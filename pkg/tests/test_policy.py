import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecad.config import data_path
from mecad.policy import (ActionKind, ActionRequest, Comparator, Family, MissingMetricError,
                          MonitoringSnapshot, PolicyEngine, PolicySyntaxError, Threshold, evaluate_policy,
                          parse_policies, parse_policy, resolve_actions, serialize_policies,
                          serialize_policy)

RAM_POLICY = """
policy vi-increase-ram
  family: VI
  when: vm.ram_usage >= #RamUsageMax
  then: INCREASE_RAM(vm, ram_delta=4)
  priority: 5
end
"""

GPU_POLICY = """
policy meapp-gpu-asd
  family: MEAPP
  when: app.kind == ASD_CPU and app.num_net_flows_per_s >= #NetFlowsMaxForCpu
  then: DEPLOY_ME_APP(ran, app_kind=ASD_GPU, replaces=app.id)
  priority: 10
end
"""

ADF_POLICY = """
policy adf-update-model
  family: ADF
  when: model.is_improved == true
  then: UPDATE_MODEL(app, model=model.available_model_version)
end
"""


def vm(vid, ran="ran-1", ram=0.5):
    return {"id": vid, "ran": ran, "role": "asd", "state": "RUNNING", "cpus": 4, "gpu": False,
            "cpu_usage": 0.1, "ram_usage": ram, "ram_gb": 4.0}


def asd(aid, vm_id, ran="ran-1", rate=1000.0, version=1, available=1):
    return {"id": aid, "ran": ran, "vm": vm_id, "kind": "ASD_CPU", "state": "RUNNING",
            "num_net_flows_per_s": rate, "model_version": version,
            "available_model_version": available, "is_improved": available > version}


def ran(rid="ran-1", has_dpi=False):
    return {"id": rid, "flow_rate": 0.0, "forecast_rate": 0.0, "feature_rate": 0.0, "has_dpi": has_dpi}


def snap(t=0.0, vms=(), apps=(), rans=(ran(),), nad=(), locked=()):
    return MonitoringSnapshot(t, {v["id"]: v for v in vms}, {a["id"]: a for a in apps},
                              {r["id"]: r for r in rans}, tuple(nad), frozenset(locked))


# --- parsing --------------------------------------------------------------------

def test_parse_ram_policy():
    p = parse_policy(RAM_POLICY)
    assert p.family is Family.VI and p.priority == 5
    (pred,) = p.conditions
    assert (pred.subject, pred.metric, pred.comparator) == ("vm", "ram_usage", Comparator.GE)
    assert pred.value == Threshold("RamUsageMax")
    (act,) = p.actions
    assert act.kind is ActionKind.INCREASE_RAM


def test_empty_actions_rejected():
    with pytest.raises(PolicySyntaxError):
        parse_policy("policy p\n  family: VI\n  when: vm.ram_usage > 0.5\n  then:\nend\n")


@pytest.mark.parametrize("text", [
    "policy p\n  family: VI\n  when: vm.bogus > 1\n  then: DISMANTLE_VM(vm)\nend\n",
    "policy p\n  family: VI\n  when: vm.ram_usage > 1\n  then: EXPLODE(vm)\nend\n",
    "policy p\n  family: XX\n  when: vm.ram_usage > 1\n  then: DISMANTLE_VM(vm)\nend\n",
    "policy p\n  family: VI\n  when: vm.ram_usage > 1\n  then: INCREASE_RAM(vm)\nend\n",
    "policy p\n  family: VI\n  when: vm.ram_usage > 1\n  then: DISMANTLE_VM(vm)\n",
])
def test_malformed_documents(text):
    with pytest.raises(PolicySyntaxError):
        parse_policy(text)


def test_syntax_error_carries_line():
    bad = "policy p\n  family: VI\n  when: vm.nope > 1\n  then: DISMANTLE_VM(vm)\nend\n"
    with pytest.raises(PolicySyntaxError) as info:
        parse_policy(bad)
    assert info.value.line == 3


def test_round_trip_all_shipped():
    for name in ("usecase.pol", "dynamics.pol"):
        policies = parse_policies(data_path(name).read_text())
        assert policies
        assert parse_policies(serialize_policies(policies)) == policies
    for text in (RAM_POLICY, GPU_POLICY, ADF_POLICY):
        p = parse_policy(text)
        assert parse_policy(serialize_policy(p)) == p


def test_shipped_policies_cover_use_case():
    ids = {p.id: p for p in parse_policies(data_path("usecase.pol").read_text())}
    assert {p.family for p in ids.values()} == {Family.VI, Family.ADF, Family.MEAPP}
    kinds = {a.kind for p in ids.values() for a in p.actions}
    assert kinds == {ActionKind.INCREASE_RAM, ActionKind.UPDATE_MODEL, ActionKind.DEPLOY_ME_APP}


def test_window_location_and_cooldown_parse():
    p = parse_policy("policy p\n  family: VI\n  when: vm.ram_usage in [0.2, 0.4]\n  where: ran-2, ran-3\n"
                     "  within: 10 .. 20\n  then: DISMANTLE_VM(vm)\n  cooldown: 30\nend\n")
    assert p.location == ("ran-2", "ran-3") and p.active_window == (10, 20) and p.cooldown == 30
    assert p.conditions[0].comparator is Comparator.IN_RANGE


# --- evaluation -----------------------------------------------------------------

def test_ram_policy_fires_on_that_vm():
    s = snap(vms=[vm("v1", ram=0.92), vm("v2", ram=0.4)])
    out = evaluate_policy(parse_policy(RAM_POLICY), s, {"RamUsageMax": 0.85})
    assert out == [ActionRequest.make("INCREASE_RAM", "v1", ram_delta=4)]


def test_gpu_policy_deploys_on_ran():
    s = snap(vms=[vm("v3")], apps=[asd("asd1", "v3", rate=900_000)])
    out = evaluate_policy(parse_policy(GPU_POLICY), s, {"NetFlowsMaxForCpu": 842_600})
    assert out == [ActionRequest.make("DEPLOY_ME_APP", "ran-1", app_kind="ASD_GPU", replaces="asd1")]
    s = snap(vms=[vm("v3")], apps=[asd("asd1", "v3", rate=800_000)])
    assert evaluate_policy(parse_policy(GPU_POLICY), s, {"NetFlowsMaxForCpu": 842_600}) == []


def test_model_upgrade():
    s = snap(vms=[vm("v3")], apps=[asd("asd1", "v3", version=3, available=4)])
    out = evaluate_policy(parse_policy(ADF_POLICY), s)
    assert out == [ActionRequest.make("UPDATE_MODEL", "asd1", model=4)]


def test_missing_metric_distinct_from_false():
    incomplete = vm("v1")
    del incomplete["ram_usage"]
    with pytest.raises(MissingMetricError):
        evaluate_policy(parse_policy(RAM_POLICY), snap(vms=[incomplete]), {"RamUsageMax": 0.85})
    with pytest.raises(MissingMetricError):
        evaluate_policy(parse_policy(RAM_POLICY), snap(vms=[vm("v1")]), {})


def test_cooldown_window_and_location():
    p = parse_policy("policy p\n  family: VI\n  when: vm.ram_usage > 0.5\n  where: ran-1\n"
                     "  within: 10 .. 20\n  then: INCREASE_RAM(vm, ram_delta=1)\n  cooldown: 30\nend\n")
    hot = [vm("v1", ram=0.9), vm("v2", ran="ran-2", ram=0.9)]
    assert evaluate_policy(p, snap(t=5, vms=hot)) == []
    assert len(evaluate_policy(p, snap(t=15, vms=hot))) == 1
    assert evaluate_policy(p, snap(t=15, vms=hot), last_fired=0.0) == []
    assert evaluate_policy(p, snap(t=25, vms=hot)) == []


def test_engine_cooldown_limits_firing_rate():
    engine = PolicyEngine([parse_policy(RAM_POLICY)], {"RamUsageMax": 0.85}, default_cooldown=60.0)
    fired = [t for t in range(0, 300, 3) if engine.step(snap(t=float(t), vms=[vm("v1", ram=0.95)]))]
    assert fired == [0, 60, 120, 180, 240]


@settings(max_examples=200)
@given(base=st.floats(0, 1), bump=st.floats(1e-9, 1), thr=st.floats(0, 1))
def test_ge_monotonicity(base, bump, thr):
    p = parse_policy(RAM_POLICY)
    t = {"RamUsageMax": thr}
    if evaluate_policy(p, snap(vms=[vm("v1", ram=base)]), t):
        assert evaluate_policy(p, snap(vms=[vm("v1", ram=base + bump)]), t)


@settings(max_examples=100)
@given(ram=st.floats(0, 1), t=st.floats(0, 1e4), last=st.one_of(st.none(), st.floats(0, 1e4)))
def test_evaluation_is_pure(ram, t, last):
    p = parse_policy(RAM_POLICY)
    s = snap(t=t, vms=[vm("v1", ram=ram)])
    assert evaluate_policy(p, s, {"RamUsageMax": 0.5}, last) == evaluate_policy(p, s, {"RamUsageMax": 0.5}, last)


# --- resolution -----------------------------------------------------------------

def policy_with(pid, priority):
    text = RAM_POLICY.replace("vi-increase-ram", pid).replace("priority: 5", f"priority: {priority}")
    return parse_policy(text)


def test_identical_actions_deduplicated():
    a = ActionRequest.make("INCREASE_RAM", "v1", ram_delta=4)
    assert resolve_actions([(policy_with("a", 1), a), (policy_with("b", 2), a)]) == [a]


def test_empty_resolution():
    assert resolve_actions([]) == []


def test_priority_then_id_ordering():
    x = ActionRequest.make("INCREASE_RAM", "v1", ram_delta=1)
    y = ActionRequest.make("INCREASE_RAM", "v2", ram_delta=1)
    z = ActionRequest.make("INCREASE_RAM", "v3", ram_delta=1)
    out = resolve_actions([(policy_with("b", 1), x), (policy_with("a", 1), y), (policy_with("c", 9), z)])
    assert out == [z, y, x]


def test_locked_resources_dropped():
    dropped = []
    a = ActionRequest.make("INCREASE_RAM", "v1", ram_delta=1)
    assert resolve_actions([(policy_with("a", 1), a)], snap(locked={"v1"}), dropped) == []
    assert dropped and dropped[0][0] == a


# Pairs of action kinds that cannot both act on one resource in the same tick.
# Written per kind so it can be checked against the module's own table.
EXCLUSIVE = {
    ActionKind.DISMANTLE_VM: {ActionKind.DEPLOY_ME_APP, ActionKind.DEPLOY_DPI, ActionKind.INCREASE_RAM,
                              ActionKind.UPDATE_MODEL, ActionKind.SET_OFFSET},
    ActionKind.DEPLOY_ME_APP: {ActionKind.DISMANTLE_VM, ActionKind.SET_OFFSET, ActionKind.UPDATE_MODEL,
                               ActionKind.RECONFIGURE_FC, ActionKind.DEPLOY_ME_APP},
    ActionKind.INCREASE_RAM: {ActionKind.DISMANTLE_VM, ActionKind.INCREASE_RAM},
    ActionKind.UPDATE_MODEL: {ActionKind.DISMANTLE_VM, ActionKind.DEPLOY_ME_APP, ActionKind.UPDATE_MODEL},
    ActionKind.SET_OFFSET: {ActionKind.DISMANTLE_VM, ActionKind.DEPLOY_ME_APP, ActionKind.SET_OFFSET},
    ActionKind.RECONFIGURE_FC: {ActionKind.DEPLOY_ME_APP, ActionKind.RECONFIGURE_FC},
    ActionKind.DEPLOY_DPI: {ActionKind.DISMANTLE_VM},
    ActionKind.DROP_FLOWS: set(),
}

PARAMS = {
    ActionKind.INCREASE_RAM: {"ram_delta": 1},
    ActionKind.UPDATE_MODEL: {"model": 2},
    ActionKind.DEPLOY_ME_APP: {"app_kind": "ASD_GPU"},
    ActionKind.DISMANTLE_VM: {},
    ActionKind.RECONFIGURE_FC: {"new_target": "fc-target"},
    ActionKind.SET_OFFSET: {"offset_factor": 2},
    ActionKind.DEPLOY_DPI: {},
    ActionKind.DROP_FLOWS: {},
}


def conflict_oracle_cases():
    for k1, k2 in itertools.product(ActionKind, repeat=2):
        for same in (True, False):
            for p1, p2 in ((9, 1), (1, 9)):
                yield k1, k2, same, p1, p2


def test_exclusive_table_is_symmetric():
    for k, others in EXCLUSIVE.items():
        for o in others:
            assert k in EXCLUSIVE[o]


@pytest.mark.parametrize("k1,k2,same,p1,p2", list(conflict_oracle_cases()))
def test_conflict_enumeration(k1, k2, same, p1, p2):
    def params(kind, target):
        # a redirect also touches its new target, so keep those distinct per action
        return {k: f"{v}-{target}" if k == "new_target" else v for k, v in PARAMS[kind].items()}

    tb = "res-a" if same else "res-b"
    a = ActionRequest.make(k1, "res-a", **params(k1, "res-a"))
    b = ActionRequest.make(k2, tb, **params(k2, tb))
    dropped = []
    out = resolve_actions([(policy_with("first", p1), a), (policy_with("second", p2), b)], None, dropped)
    winner, loser = (a, b) if p1 > p2 else (b, a)
    if a == b:
        assert out == [a]
    elif same and k2 in EXCLUSIVE[k1]:
        assert out == [winner]
        assert dropped == [(loser, dropped[0][1])]
    else:
        assert out == [winner, loser] and dropped == []
