"""Management policies: representation, text syntax, evaluation and conflict resolution.

A policy is a conjunction of predicates over monitored resources plus a list
of action templates. Predicates and templates name resources through
selectors (``vm``, ``app``, ``model``, ``ran``, ``nad_output``); evaluation
binds the selectors to concrete resources in a monitoring snapshot.

Text syntax, one block per policy::

    policy meapp-gpu-scale-up
      family: MEAPP
      when: app.kind == ASD_CPU and app.num_net_flows_per_s >= #NetFlowsMaxForCpu
      where: ran-1
      within: 0 .. 3600
      then: DEPLOY_ME_APP(ran, app_kind=ASD_GPU, replaces=app.id)
      priority: 10
      cooldown: 60
    end

``#Name`` refers to a named threshold supplied at evaluation time.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

log = logging.getLogger(__name__)


class Family(str, enum.Enum):
    VI = "VI"
    ADF = "ADF"
    MEAPP = "MEAPP"


class Comparator(str, enum.Enum):
    GT = ">"
    GE = ">="
    LT = "<"
    LE = "<="
    EQ = "=="
    IN_RANGE = "in"


class ActionKind(str, enum.Enum):
    INCREASE_RAM = "INCREASE_RAM"
    UPDATE_MODEL = "UPDATE_MODEL"
    DEPLOY_ME_APP = "DEPLOY_ME_APP"
    DISMANTLE_VM = "DISMANTLE_VM"
    RECONFIGURE_FC = "RECONFIGURE_FC"
    SET_OFFSET = "SET_OFFSET"
    DEPLOY_DPI = "DEPLOY_DPI"
    DROP_FLOWS = "DROP_FLOWS"  # no-op placeholder for traffic filtering


SUBJECTS = ("vm", "app", "model", "ran", "nad_output")

METRICS: dict[str, frozenset[str]] = {
    "vm": frozenset({"id", "ran", "role", "state", "cpus", "gpu", "cpu_usage", "ram_usage", "ram_gb"}),
    "app": frozenset({"id", "ran", "vm", "kind", "state", "backend", "offset", "batch_size",
                      "measured_feature_rate", "num_net_flows_per_s", "forecast_flow_rate",
                      "forecast_flow_rate_of", "sustainable_flow_rate", "utilization",
                      "forecast_utilization", "forecast_utilization_of", "is_fc_target", "threshold"}),
    "model": frozenset({"id", "model_version", "available_model_version", "is_improved"}),
    "ran": frozenset({"id", "flow_rate", "forecast_rate", "feature_rate", "has_dpi"}),
    "nad_output": frozenset({"anomaly_type", "suspicious_cc", "ran", "count"}),
}

# kind -> (required params, optional params, allowed target selectors)
ACTION_SCHEMA: dict[ActionKind, tuple[frozenset, frozenset, frozenset]] = {
    ActionKind.INCREASE_RAM: (frozenset({"ram_delta"}), frozenset(), frozenset({"vm"})),
    ActionKind.UPDATE_MODEL: (frozenset({"model"}), frozenset(), frozenset({"app", "model"})),
    ActionKind.DEPLOY_ME_APP: (frozenset({"app_kind"}), frozenset({"replaces", "host"}),
                               frozenset({"ran", "vm"})),
    ActionKind.DISMANTLE_VM: (frozenset(), frozenset(), frozenset({"vm"})),
    ActionKind.RECONFIGURE_FC: (frozenset({"new_target"}), frozenset(), frozenset({"ran"})),
    ActionKind.SET_OFFSET: (frozenset(), frozenset({"new_offset", "offset_factor"}),
                            frozenset({"app", "model"})),
    ActionKind.DEPLOY_DPI: (frozenset(), frozenset({"host"}), frozenset({"ran", "vm"})),
    ActionKind.DROP_FLOWS: (frozenset(), frozenset({"match"}), frozenset({"ran"})),
}


class PolicySyntaxError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class MissingMetricError(KeyError):
    """The snapshot lacks a metric a policy refers to."""


@dataclass(frozen=True)
class Threshold:
    name: str

    def __str__(self) -> str:
        return f"#{self.name}"


@dataclass(frozen=True)
class Ref:
    """A reference to a metric of a bound resource, used in action params."""

    subject: str
    metric: str

    def __str__(self) -> str:
        return f"{self.subject}.{self.metric}"


@dataclass(frozen=True)
class Predicate:
    subject: str
    metric: str
    comparator: Comparator
    value: Any

    def __post_init__(self):
        if self.subject not in SUBJECTS:
            raise ValueError(f"unknown subject {self.subject!r}")
        if self.metric not in METRICS[self.subject]:
            raise ValueError(f"unknown metric {self.subject}.{self.metric}")
        if self.comparator is Comparator.IN_RANGE and not (
                isinstance(self.value, tuple) and len(self.value) == 2):
            raise ValueError("IN_RANGE needs a [low, high] pair")


def _freeze(params: Mapping[str, Any]) -> tuple[tuple[str, Any], ...]:
    return tuple(sorted(params.items()))


@dataclass(frozen=True)
class ActionRequest:
    """A concrete action bound to one resource id."""

    kind: ActionKind
    target: str
    params: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def make(cls, kind: ActionKind | str, target: str, **params) -> "ActionRequest":
        return cls(ActionKind(kind), target, _freeze(params))

    def param(self, name: str, default=None):
        return dict(self.params).get(name, default)

    def __str__(self) -> str:
        args = [self.target] + [f"{k}={_format_value(v)}" for k, v in self.params]
        return f"{self.kind.value}({', '.join(args)})"


@dataclass(frozen=True)
class ActionTemplate:
    kind: ActionKind
    target: str  # selector
    params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        required, optional, targets = ACTION_SCHEMA[self.kind]
        names = {k for k, _ in self.params}
        if self.target not in targets:
            raise ValueError(f"{self.kind.value} cannot target {self.target!r}")
        if missing := required - names:
            raise ValueError(f"{self.kind.value} missing params {sorted(missing)}")
        if extra := names - required - optional:
            raise ValueError(f"{self.kind.value} got unknown params {sorted(extra)}")
        if self.kind is ActionKind.SET_OFFSET and len(names) != 1:
            raise ValueError("SET_OFFSET takes exactly one of new_offset, offset_factor")


@dataclass(frozen=True)
class Policy:
    id: str
    family: Family
    conditions: tuple[Predicate, ...]
    actions: tuple[ActionTemplate, ...]
    location: tuple[str, ...] | None = None
    active_window: tuple[float, float] | None = None
    priority: int = 0
    cooldown: float | None = None

    def __post_init__(self):
        if not self.conditions:
            raise ValueError(f"policy {self.id}: at least one condition required")
        if not self.actions:
            raise ValueError(f"policy {self.id}: at least one action required")
        if self.cooldown is not None and self.cooldown < 0:
            raise ValueError(f"policy {self.id}: cooldown must be >= 0")
        if self.active_window is not None and self.active_window[1] < self.active_window[0]:
            raise ValueError(f"policy {self.id}: active window ends before it starts")

    @property
    def subjects(self) -> set[str]:
        subs = {p.subject for p in self.conditions} | {a.target for a in self.actions}
        for a in self.actions:
            subs |= {v.subject for _, v in a.params if isinstance(v, Ref)}
        return subs

    @property
    def thresholds(self) -> set[str]:
        names = set()
        for p in self.conditions:
            vals = p.value if isinstance(p.value, tuple) else (p.value,)
            names |= {v.name for v in vals if isinstance(v, Threshold)}
        for a in self.actions:
            names |= {v.name for _, v in a.params if isinstance(v, Threshold)}
        return names


# --- text syntax -----------------------------------------------------------

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_PREDICATE = re.compile(r"^(\w+)\.(\w+)\s*(>=|<=|==|>|<|\bin\b)\s*(.+)$")
_ACTION = re.compile(r"^([A-Z_]+)\s*\((.*)\)$")
_FIELDS = ("family", "when", "where", "within", "then", "priority", "cooldown")


def _parse_value(token: str, allow_ref: bool = False):
    token = token.strip()
    if not token:
        raise ValueError("empty value")
    if token.startswith("#"):
        if not _IDENT.match(token[1:]):
            raise ValueError(f"bad threshold name {token!r}")
        return Threshold(token[1:])
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "\"'":
        return token[1:-1]
    if token in ("true", "false"):
        return token == "true"
    if _NUMBER.match(token):
        return int(token) if re.match(r"^[+-]?\d+$", token) else float(token)
    if allow_ref and "." in token:
        subject, _, metric = token.partition(".")
        if subject in SUBJECTS:
            if metric not in METRICS[subject]:
                raise ValueError(f"unknown metric {token}")
            return Ref(subject, metric)
    if re.match(r"^[A-Za-z_][\w\-]*$", token):
        return token
    raise ValueError(f"cannot parse value {token!r}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (Threshold, Ref)):
        return str(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    s = str(v)
    if _IDENT.match(s) and s not in ("true", "false", "and", "in"):
        return s
    return '"' + s + '"'


def _split_args(text: str) -> list[str]:
    parts, depth, cur, quote = [], 0, [], None
    for ch in text:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
            cur.append(ch)
        elif ch == "[":
            depth += 1
            cur.append(ch)
        elif ch == "]":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur).strip())
    return parts


def _parse_predicate(text: str) -> Predicate:
    m = _PREDICATE.match(text.strip())
    if not m:
        raise ValueError(f"malformed condition {text.strip()!r}")
    subject, metric, op, raw = m.groups()
    if subject not in SUBJECTS:
        raise ValueError(f"unknown subject {subject!r}")
    if metric not in METRICS[subject]:
        raise ValueError(f"unknown metric {subject}.{metric}")
    comparator = Comparator(op)
    if comparator is Comparator.IN_RANGE:
        raw = raw.strip()
        if not (raw.startswith("[") and raw.endswith("]")):
            raise ValueError("'in' expects [low, high]")
        bounds = _split_args(raw[1:-1])
        if len(bounds) != 2:
            raise ValueError("'in' expects exactly two bounds")
        value = tuple(_parse_value(b) for b in bounds)
    else:
        value = _parse_value(raw)
    return Predicate(subject, metric, comparator, value)


def _parse_action(text: str) -> ActionTemplate:
    m = _ACTION.match(text.strip())
    if not m:
        raise ValueError(f"malformed action {text.strip()!r}")
    name, args = m.groups()
    try:
        kind = ActionKind(name)
    except ValueError:
        raise ValueError(f"unknown action kind {name!r}") from None
    parts = _split_args(args)
    if not parts:
        raise ValueError(f"{name} needs a target")
    target, params = parts[0], {}
    for p in parts[1:]:
        key, eq, val = p.partition("=")
        if not eq or not _IDENT.match(key.strip()):
            raise ValueError(f"bad parameter {p!r}")
        params[key.strip()] = _parse_value(val, allow_ref=True)
    return ActionTemplate(kind, target, _freeze(params))


def _parse_block(header: str, header_line: int, body: list[tuple[int, str]]) -> Policy:
    parts = header.split()
    if len(parts) != 2:
        raise PolicySyntaxError("expected 'policy <id>'", header_line)
    pid = parts[1]
    raw: dict[str, tuple[int, str]] = {}
    for lineno, text in body:
        key, colon, value = text.partition(":")
        key = key.strip()
        if not colon:
            raise PolicySyntaxError("expected 'field: value'", lineno)
        if key not in _FIELDS:
            raise PolicySyntaxError(f"unknown field (known: {', '.join(_FIELDS)})", lineno, key)
        if key in raw:
            raise PolicySyntaxError("duplicate field", lineno, key)
        raw[key] = (lineno, value.strip())

    def get(key, required=False):
        if key not in raw:
            if required:
                raise PolicySyntaxError(f"policy {pid}: missing required field", header_line, key)
            return None, None
        return raw[key]

    def wrap(key, fn):
        lineno, value = get(key)
        if value is None:
            return None
        try:
            return fn(value)
        except ValueError as exc:
            raise PolicySyntaxError(str(exc), lineno, key) from None

    get("family", True)
    get("when", True)
    get("then", True)
    family = wrap("family", lambda v: Family(v.upper()))
    conditions = wrap("when", lambda v: tuple(_parse_predicate(c) for c in re.split(r"\s+and\s+", v)))
    actions = wrap("then", lambda v: tuple(_parse_action(a) for a in v.split(";") if a.strip()))
    if not actions:
        raise PolicySyntaxError("at least one action required", raw["then"][0], "then")
    location = wrap("where", lambda v: tuple(x.strip() for x in v.split(",") if x.strip()))

    def window(v):
        lo, sep, hi = v.partition("..")
        if not sep:
            raise ValueError("expected 'start .. end'")
        return float(lo), float(hi)

    active = wrap("within", window)
    priority = wrap("priority", int) or 0
    cooldown = wrap("cooldown", float)
    try:
        return Policy(pid, family, conditions, actions, location, active, priority, cooldown)
    except ValueError as exc:
        raise PolicySyntaxError(str(exc), header_line) from None


def parse_policies(text: str) -> list[Policy]:
    """Parse every ``policy ... end`` block in ``text``."""
    policies, header, body, start = [], None, [], 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if header is None:
            if not stripped.startswith("policy"):
                raise PolicySyntaxError("expected 'policy <id>'", lineno)
            header, body, start = stripped, [], lineno
        elif stripped == "end":
            policies.append(_parse_block(header, start, body))
            header = None
        elif stripped.startswith("policy "):
            raise PolicySyntaxError("missing 'end' before next policy", lineno)
        else:
            body.append((lineno, stripped))
    if header is not None:
        raise PolicySyntaxError("unterminated policy block (missing 'end')", start)
    ids = [p.id for p in policies]
    if len(set(ids)) != len(ids):
        raise PolicySyntaxError(f"duplicate policy ids in {ids}")
    return policies


def parse_policy(document: str) -> Policy:
    policies = parse_policies(document)
    if len(policies) != 1:
        raise PolicySyntaxError(f"expected exactly one policy, found {len(policies)}")
    return policies[0]


def serialize_policy(policy: Policy) -> str:
    def pred(p: Predicate) -> str:
        return f"{p.subject}.{p.metric} {p.comparator.value} {_format_value(p.value)}"

    def act(a: ActionTemplate) -> str:
        args = [a.target] + [f"{k}={_format_value(v)}" for k, v in a.params]
        return f"{a.kind.value}({', '.join(args)})"

    lines = [f"policy {policy.id}", f"  family: {policy.family.value}",
             "  when: " + " and ".join(pred(p) for p in policy.conditions)]
    if policy.location is not None:
        lines.append("  where: " + ", ".join(policy.location))
    if policy.active_window is not None:
        lines.append(f"  within: {policy.active_window[0]!r} .. {policy.active_window[1]!r}")
    lines.append("  then: " + "; ".join(act(a) for a in policy.actions))
    lines.append(f"  priority: {policy.priority}")
    if policy.cooldown is not None:
        lines.append(f"  cooldown: {policy.cooldown!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def serialize_policies(policies: Iterable[Policy]) -> str:
    return "\n".join(serialize_policy(p) for p in policies)


# --- evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class MonitoringSnapshot:
    """Point-in-time view of the managed system.

    Resource tables map ids to flat metric dicts whose keys follow
    :data:`METRICS`. ``locked`` lists resource ids held by running workflows.
    """

    time: float
    vms: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    apps: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    rans: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    nad_outputs: tuple[Mapping[str, Any], ...] = ()
    locked: frozenset[str] = frozenset()


def _bindings(policy: Policy, snap: MonitoringSnapshot) -> Iterable[dict[str, Mapping | None]]:
    subjects = policy.subjects
    if "nad_output" in subjects:
        for out in snap.nad_outputs:
            yield {"nad_output": out, "ran": snap.rans.get(out.get("ran"))}
    elif subjects & {"app", "model"}:
        for app_id in sorted(snap.apps):
            app = snap.apps[app_id]
            yield {"app": app, "model": app if "model_version" in app else None,
                   "vm": snap.vms.get(app.get("vm")), "ran": snap.rans.get(app.get("ran"))}
    elif "vm" in subjects:
        for vm_id in sorted(snap.vms):
            vm = snap.vms[vm_id]
            yield {"vm": vm, "ran": snap.rans.get(vm.get("ran"))}
    else:
        for ran_id in sorted(snap.rans):
            yield {"ran": snap.rans[ran_id]}


def _resolve(value, thresholds: Mapping[str, Any]):
    if isinstance(value, Threshold):
        if value.name not in thresholds:
            raise MissingMetricError(f"threshold #{value.name} is not defined")
        return thresholds[value.name]
    if isinstance(value, tuple):
        return tuple(_resolve(v, thresholds) for v in value)
    return value


def _metric(binding, subject: str, metric: str):
    resource = binding.get(subject)
    if resource is None:
        return None, False
    if metric not in resource:
        raise MissingMetricError(f"snapshot has no {subject}.{metric} for {resource.get('id', '?')}")
    return resource[metric], True


def _holds(pred: Predicate, actual, thresholds) -> bool:
    expected = _resolve(pred.value, thresholds)
    c = pred.comparator
    if c is Comparator.EQ:
        return actual == expected
    if actual is None:
        return False
    if c is Comparator.GT:
        return actual > expected
    if c is Comparator.GE:
        return actual >= expected
    if c is Comparator.LT:
        return actual < expected
    if c is Comparator.LE:
        return actual <= expected
    lo, hi = expected
    return lo <= actual <= hi


def _ran_of(binding) -> str | None:
    for key in ("ran", "app", "vm"):
        res = binding.get(key)
        if res is not None:
            return res.get("id") if key == "ran" else res.get("ran")
    out = binding.get("nad_output")
    return out.get("ran") if out else None


def evaluate_policy(policy: Policy, snapshot: MonitoringSnapshot,
                    thresholds: Mapping[str, Any] | None = None,
                    last_fired: float | None = None,
                    default_cooldown: float = 0.0) -> list[ActionRequest]:
    """Bound actions for every resource binding that satisfies the policy.

    Raises :class:`MissingMetricError` when a referenced metric is absent,
    which is distinct from a condition that evaluates false.
    """
    thresholds = thresholds or {}
    now = snapshot.time
    if policy.active_window is not None:
        lo, hi = policy.active_window
        if not lo <= now <= hi:
            return []
    cooldown = default_cooldown if policy.cooldown is None else policy.cooldown
    if last_fired is not None and now - last_fired < cooldown:
        return []
    out: list[ActionRequest] = []
    for binding in _bindings(policy, snapshot):
        if policy.location is not None and _ran_of(binding) not in policy.location:
            continue
        ok = True
        for pred in policy.conditions:
            actual, present = _metric(binding, pred.subject, pred.metric)
            if not present or not _holds(pred, actual, thresholds):
                ok = False
                break
        if not ok:
            continue
        for tmpl in policy.actions:
            target = binding.get(tmpl.target)
            if target is None:
                continue
            params = {}
            for k, v in tmpl.params:
                if isinstance(v, Ref):
                    v, present = _metric(binding, v.subject, v.metric)
                    if not present:
                        raise MissingMetricError(f"action parameter {k} refers to an unbound {v}")
                params[k] = _resolve(v, thresholds)
            action = ActionRequest(tmpl.kind, str(target["id"]), _freeze(params))
            if action not in out:
                out.append(action)
    return out


# unordered kind pairs that may not both act on the same resource
CONFLICTS: frozenset[frozenset[ActionKind]] = frozenset(frozenset(p) for p in [
    (ActionKind.DEPLOY_ME_APP, ActionKind.DISMANTLE_VM),
    (ActionKind.DEPLOY_DPI, ActionKind.DISMANTLE_VM),
    (ActionKind.INCREASE_RAM, ActionKind.DISMANTLE_VM),
    (ActionKind.UPDATE_MODEL, ActionKind.DISMANTLE_VM),
    (ActionKind.SET_OFFSET, ActionKind.DISMANTLE_VM),
    (ActionKind.DEPLOY_ME_APP, ActionKind.SET_OFFSET),
    (ActionKind.DEPLOY_ME_APP, ActionKind.UPDATE_MODEL),
    (ActionKind.DEPLOY_ME_APP, ActionKind.RECONFIGURE_FC),
    (ActionKind.DEPLOY_ME_APP, ActionKind.DEPLOY_ME_APP),
    (ActionKind.INCREASE_RAM, ActionKind.INCREASE_RAM),
    (ActionKind.UPDATE_MODEL, ActionKind.UPDATE_MODEL),
    (ActionKind.SET_OFFSET, ActionKind.SET_OFFSET),
    (ActionKind.RECONFIGURE_FC, ActionKind.RECONFIGURE_FC),
])


def touched_resources(action: ActionRequest, snapshot: MonitoringSnapshot | None = None) -> set[str]:
    """Resource ids an action would modify, including an app's host VM."""
    ids = {action.target}
    for key in ("replaces", "host", "new_target"):
        if (v := action.param(key)) is not None:
            ids.add(str(v))
    if snapshot is not None:
        for rid in list(ids):
            app = snapshot.apps.get(rid)
            if app is not None and app.get("vm"):
                ids.add(app["vm"])
    return ids


def conflicts(a: ActionRequest, b: ActionRequest, snapshot: MonitoringSnapshot | None = None) -> bool:
    if a == b or frozenset((a.kind, b.kind)) not in CONFLICTS:
        return False
    return bool(touched_resources(a, snapshot) & touched_resources(b, snapshot))


def resolve_actions(fired: Sequence[tuple[Policy, ActionRequest]],
                    snapshot: MonitoringSnapshot | None = None,
                    dropped: list | None = None) -> list[ActionRequest]:
    """Deduplicate, order by priority, and drop conflicting or locked actions.

    Higher priority wins a conflict; equal priorities fall back to policy id.
    Dropped actions are appended to ``dropped`` as ``(action, reason)``.
    """
    locked = snapshot.locked if snapshot is not None else frozenset()
    order = sorted(range(len(fired)), key=lambda i: (-fired[i][0].priority, fired[i][0].id, i))
    kept: list[ActionRequest] = []
    for i in order:
        policy, action = fired[i]
        if action in kept:
            continue
        busy = touched_resources(action, snapshot) & locked
        if busy:
            reason = f"resources {sorted(busy)} are locked by a running workflow"
        else:
            rival = next((k for k in kept if conflicts(k, action, snapshot)), None)
            if rival is None:
                kept.append(action)
                continue
            reason = f"conflicts with {rival}"
            log.warning("policy %s: dropping %s (%s)", policy.id, action, reason)
        if dropped is not None:
            dropped.append((action, reason))
    return kept


class PolicyEngine:
    """Evaluates a policy set against snapshots, tracking cooldowns."""

    def __init__(self, policies: Sequence[Policy], thresholds: Mapping[str, Any] | None = None,
                 default_cooldown: float = 0.0):
        self.policies = list(policies)
        self.thresholds = dict(thresholds or {})
        self.default_cooldown = default_cooldown
        self.last_fired: dict[str, float] = {}
        self.firings: list[tuple[float, str, ActionRequest]] = []

    def evaluate(self, snapshot: MonitoringSnapshot) -> list[tuple[Policy, ActionRequest]]:
        """Candidate actions of every policy; does not touch cooldown state."""
        fired = []
        for policy in self.policies:
            for a in evaluate_policy(policy, snapshot, self.thresholds,
                                     self.last_fired.get(policy.id), self.default_cooldown):
                fired.append((policy, a))
        return fired

    def step(self, snapshot: MonitoringSnapshot, dropped: list | None = None) -> list[ActionRequest]:
        """Evaluate, resolve, and start the cooldown of policies whose actions survive."""
        fired = self.evaluate(snapshot)
        kept = resolve_actions(fired, snapshot, dropped)
        for policy, action in fired:
            if action in kept:
                self.last_fired[policy.id] = snapshot.time
                self.firings.append((snapshot.time, policy.id, action))
        return kept
