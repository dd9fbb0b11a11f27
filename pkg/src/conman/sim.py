"""Deterministic discrete-event simulator for two multi-interface hosts.

A scenario file declares the hosts, their policy sets, the applications that
open channels, a time-ordered list of context events, and a scripted stream of
user cost decisions. The run processes application starts/stops and context
events in time order (application events first on ties, then input order),
re-evaluates every live channel after each event, and emits a timestamped
trace plus per-channel metrics. Identical scenarios replay to byte-identical
traces.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .channel import (
    Action,
    ActionKind,
    Cause,
    Channel,
    ChannelManager,
    ChannelState,
    Decision,
    DelayTable,
    DwellConfig,
    SwitchEstimate,
    apply_transition,
    throughput_reading,
)
from .context import (
    ContextStore,
    ContextTuple,
    E2E_FEATURES,
    InterfaceDescriptor,
    SNAPSHOT_DEFAULTS,
    iface_entity,
    link_entity,
)
from .costs import FactorName, FactorSpec, parse_factor_catalog
from .errors import (
    EventOrderError,
    ParseError,
    SchemaError,
    UnknownReference,
    ValidationError,
)
from .policy import (
    ChannelRequest,
    Direction,
    PolicySet,
    QoSRequirement,
    TrafficClass,
    parse_policy_document,
)

log = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class EventKind(Enum):
    SET_CONTEXT = "set_context"
    INTERFACE_UP = "interface_up"
    INTERFACE_DOWN = "interface_down"
    SET_E2E = "set_e2e"


@dataclass(frozen=True)
class InterfaceDef:
    descriptor: InterfaceDescriptor
    initial: dict[str, Union[int, float, str, bool]]


@dataclass(frozen=True)
class HostDef:
    id: str
    interfaces: tuple[InterfaceDef, ...]


@dataclass(frozen=True)
class ApplicationDef:
    id: str
    traffic_class: TrafficClass
    direction: Direction
    qos: QoSRequirement
    start: int
    stop: int


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: EventKind
    entity: Optional[str] = None
    feature: Optional[str] = None
    value: Union[int, float, str, bool, None] = None
    host: Optional[str] = None
    index: Optional[int] = None
    local: Optional[int] = None
    remote: Optional[int] = None


@dataclass(frozen=True)
class UserScriptEntry:
    start: int
    stop: int
    decision: Decision


@dataclass(frozen=True)
class SimConfig:
    catalog: dict[FactorName, FactorSpec]
    delay_table: DelayTable
    dwell: DwellConfig
    eval_poll_ms: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    hosts: tuple[HostDef, HostDef]
    policies: dict[str, PolicySet]
    applications: tuple[ApplicationDef, ...]
    events: tuple[SimEvent, ...]
    user_script: tuple[UserScriptEntry, ...]
    config: SimConfig
    seed: int = 0


@dataclass(frozen=True)
class TraceRecord:
    time: int
    channel: str
    cause: Cause
    action: ActionKind
    old_pair: Optional[tuple[int, int]]
    new_pair: Optional[tuple[int, int]]
    mmp: Optional[str]
    cost: Optional[float]
    description: str = ""
    estimate: Optional[SwitchEstimate] = None
    current_throughput: Optional[float] = None

    def to_json_obj(self) -> dict:
        # Fixed key order is part of the trace file contract.
        return {
            "time": self.time,
            "channel": self.channel,
            "cause": self.cause.value,
            "action": self.action.value,
            "old_pair": list(self.old_pair) if self.old_pair else None,
            "new_pair": list(self.new_pair) if self.new_pair else None,
            "mmp": self.mmp,
            "cost": self.cost,
        }


@dataclass
class ChannelMetrics:
    switches: int = 0
    suspends: int = 0
    suspended_ms: int = 0
    active_ms: int = 0
    pre_establish_ms: int = 0
    qos_violation_ms: int = 0
    window_ms: int = 0
    mean_active_cost: Optional[float] = None

    def to_json_obj(self) -> dict:
        return {
            "switches": self.switches,
            "suspends": self.suspends,
            "suspended_ms": self.suspended_ms,
            "active_ms": self.active_ms,
            "pre_establish_ms": self.pre_establish_ms,
            "qos_violation_ms": self.qos_violation_ms,
            "window_ms": self.window_ms,
            "mean_active_cost": self.mean_active_cost,
        }


@dataclass(frozen=True)
class Metrics:
    channels: dict[str, ChannelMetrics]

    def to_json_obj(self) -> dict:
        return {"channels": {cid: m.to_json_obj() for cid, m in self.channels.items()}}


# -- scenario loading ---------------------------------------------------------

_TOP_KEYS = {"hosts", "policies", "applications", "events", "user_script", "config", "seed"}
_QOS_KEYS = {"min_throughput", "max_delay", "max_cost_rate", "max_disruption", "min_acceptable"}
_SNAPSHOT_FEATURES = set(SNAPSHOT_DEFAULTS)


def _require(cond: bool, message: str, exc=SchemaError) -> None:
    if not cond:
        raise exc(message)


def _number(raw, what: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise SchemaError(f"{what} must be a number, got {raw!r}")
    return float(raw)


def _time_ms(raw, what: str) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise SchemaError(f"{what} must be an integer millisecond count, got {raw!r}")
    if raw < 0:
        raise ValidationError(f"{what} must be non-negative, got {raw}")
    return raw


def _check_feature_value(feature: str, value, what: str) -> None:
    """Interface features are typed: available is a flag, the rest are numbers."""
    if feature == "available":
        if not isinstance(value, bool):
            raise SchemaError(f"{what}: available must be a boolean, got {value!r}")
    elif feature in _SNAPSHOT_FEATURES:
        _number(value, f"{what}: {feature}")


def _parse_interface(raw, host_id: str, position: int) -> InterfaceDef:
    _require(isinstance(raw, dict), f"host {host_id!r}: interface #{position} must be an object")
    unknown = set(raw) - {"index", "tech", "max_speed", "subscribed", "initial"}
    _require(not unknown, f"host {host_id!r}: interface has unknown keys {sorted(unknown)}")
    for key in ("index", "tech", "max_speed"):
        _require(key in raw, f"host {host_id!r}: interface #{position} missing {key!r}")
    index = raw["index"]
    _require(isinstance(index, int) and not isinstance(index, bool), f"host {host_id!r}: index must be an integer")
    _require(isinstance(raw["tech"], str) and raw["tech"], f"host {host_id!r}: tech must be a non-empty string")
    max_speed = _number(raw["max_speed"], "max_speed")
    if max_speed <= 0:
        raise ValidationError(f"host {host_id!r} if{index}: max_speed must be positive")
    descriptor = InterfaceDescriptor(
        host_id=host_id,
        index=index,
        tech_type=raw["tech"].upper(),
        max_speed=max_speed,
        subscribed=bool(raw.get("subscribed", True)),
    )
    initial = raw.get("initial", {})
    _require(isinstance(initial, dict), f"host {host_id!r} if{index}: initial must be an object")
    unknown = set(initial) - _SNAPSHOT_FEATURES
    _require(not unknown, f"host {host_id!r} if{index}: unknown initial features {sorted(unknown)}")
    for feat, value in initial.items():
        _check_feature_value(feat, value, f"host {host_id!r} if{index} initial")
    return InterfaceDef(descriptor=descriptor, initial=dict(initial))


def _parse_host(raw, position: int) -> HostDef:
    _require(isinstance(raw, dict), f"host #{position} must be an object")
    unknown = set(raw) - {"id", "interfaces"}
    _require(not unknown, f"host #{position}: unknown keys {sorted(unknown)}")
    _require("id" in raw and isinstance(raw["id"], str), f"host #{position}: missing string id")
    host_id = raw["id"]
    if not _ID_RE.match(host_id):
        raise ValidationError(f"host id {host_id!r} must match [A-Za-z0-9_-]+")
    ifaces_raw = raw.get("interfaces")
    _require(isinstance(ifaces_raw, list) and ifaces_raw, f"host {host_id!r}: needs a non-empty interfaces list")
    interfaces = tuple(_parse_interface(item, host_id, k) for k, item in enumerate(ifaces_raw))
    indexes = sorted(d.descriptor.index for d in interfaces)
    if indexes != list(range(len(indexes))):
        raise ValidationError(
            f"host {host_id!r}: interface indexes must be contiguous from 0, got {indexes}"
        )
    ordered = tuple(sorted(interfaces, key=lambda d: d.descriptor.index))
    return HostDef(id=host_id, interfaces=ordered)


def _parse_qos(raw, app_id: str) -> QoSRequirement:
    _require(isinstance(raw, dict), f"application {app_id!r}: qos must be an object")
    unknown = set(raw) - _QOS_KEYS
    _require(not unknown, f"application {app_id!r}: qos has unknown keys {sorted(unknown)}")
    missing = _QOS_KEYS - set(raw)
    _require(not missing, f"application {app_id!r}: qos missing {sorted(missing)}")
    qos = QoSRequirement(**{k: _number(raw[k], f"qos.{k}") for k in _QOS_KEYS})
    problems = qos.validate()
    if problems:
        raise ValidationError([f"application {app_id!r}: {p}" for p in problems])
    return qos


def _parse_application(raw, position: int) -> ApplicationDef:
    _require(isinstance(raw, dict), f"application #{position} must be an object")
    unknown = set(raw) - {"id", "traffic_class", "direction", "qos", "start", "stop"}
    _require(not unknown, f"application #{position}: unknown keys {sorted(unknown)}")
    for key in ("id", "traffic_class", "direction", "qos", "start", "stop"):
        _require(key in raw, f"application #{position}: missing {key!r}")
    app_id = raw["id"]
    _require(isinstance(app_id, str) and bool(app_id), f"application #{position}: id must be a non-empty string")
    try:
        tc = TrafficClass(raw["traffic_class"])
        direction = Direction(raw["direction"])
    except ValueError as exc:
        raise SchemaError(f"application {app_id!r}: {exc}") from None
    start = _time_ms(raw["start"], f"application {app_id!r} start")
    stop = _time_ms(raw["stop"], f"application {app_id!r} stop")
    if not start < stop:
        raise ValidationError(f"application {app_id!r}: start must be before stop")
    return ApplicationDef(app_id, tc, direction, _parse_qos(raw["qos"], app_id), start, stop)


def _parse_event(raw, position: int, hosts: tuple[HostDef, HostDef]) -> SimEvent:
    _require(isinstance(raw, dict), f"event #{position} must be an object")
    _require("time" in raw and "kind" in raw, f"event #{position}: needs time and kind")
    time = _time_ms(raw["time"], f"event #{position} time")
    try:
        kind = EventKind(raw["kind"])
    except ValueError:
        raise SchemaError(f"event #{position}: unknown kind {raw['kind']!r}") from None
    by_id = {h.id: h for h in hosts}

    def check_iface(host_id, index, what):
        if host_id not in by_id:
            raise UnknownReference(f"event #{position}: unknown host {host_id!r}")
        count = len(by_id[host_id].interfaces)
        if not isinstance(index, int) or isinstance(index, bool) or not 0 <= index < count:
            raise UnknownReference(
                f"event #{position}: {what} index {index!r} not in 0..{count - 1} for host {host_id!r}"
            )

    if kind is EventKind.SET_CONTEXT:
        unknown = set(raw) - {"time", "kind", "entity", "feature", "value"}
        _require(not unknown, f"event #{position}: unknown keys {sorted(unknown)}")
        for key in ("entity", "feature", "value"):
            _require(key in raw, f"event #{position}: set_context needs {key!r}")
        entity, feature, value = raw["entity"], raw["feature"], raw["value"]
        _require(isinstance(entity, str) and bool(entity), f"event #{position}: entity must be a non-empty string")
        _require(isinstance(feature, str) and bool(feature), f"event #{position}: feature must be a non-empty string")
        _require(isinstance(value, (int, float, str, bool)), f"event #{position}: value must be a scalar")
        m = re.match(r"^([A-Za-z0-9_-]+)\.if(\d+)$", entity)
        if m:
            check_iface(m.group(1), int(m.group(2)), "interface")
            _check_feature_value(feature, value, f"event #{position}")
        return SimEvent(time=time, kind=kind, entity=entity, feature=feature, value=value)
    if kind in (EventKind.INTERFACE_UP, EventKind.INTERFACE_DOWN):
        unknown = set(raw) - {"time", "kind", "host", "index"}
        _require(not unknown, f"event #{position}: unknown keys {sorted(unknown)}")
        for key in ("host", "index"):
            _require(key in raw, f"event #{position}: {kind.value} needs {key!r}")
        check_iface(raw["host"], raw["index"], "interface")
        return SimEvent(time=time, kind=kind, host=raw["host"], index=raw["index"])
    # SET_E2E: local refers to the first host, remote to the second.
    unknown = set(raw) - {"time", "kind", "local", "remote", "feature", "value"}
    _require(not unknown, f"event #{position}: unknown keys {sorted(unknown)}")
    for key in ("local", "remote", "feature", "value"):
        _require(key in raw, f"event #{position}: set_e2e needs {key!r}")
    check_iface(hosts[0].id, raw["local"], "local")
    check_iface(hosts[1].id, raw["remote"], "remote")
    feature = raw["feature"]
    if feature not in E2E_FEATURES:
        raise SchemaError(f"event #{position}: e2e feature must be one of {list(E2E_FEATURES)}")
    value = _number(raw["value"], f"event #{position} value")
    if feature == "packet_loss_rate" and not 0 <= value <= 1:
        raise ValidationError(f"event #{position}: packet_loss_rate must be in [0, 1]")
    if value < 0:
        raise ValidationError(f"event #{position}: {feature} must be non-negative")
    return SimEvent(time=time, kind=kind, local=raw["local"], remote=raw["remote"], feature=feature, value=value)


def _parse_user_script(raw) -> tuple[UserScriptEntry, ...]:
    _require(isinstance(raw, list), "user_script must be a list")
    entries = []
    for k, item in enumerate(raw):
        _require(isinstance(item, dict), f"user_script #{k} must be an object")
        unknown = set(item) - {"from", "to", "decision"}
        _require(not unknown, f"user_script #{k}: unknown keys {sorted(unknown)}")
        for key in ("from", "to", "decision"):
            _require(key in item, f"user_script #{k}: missing {key!r}")
        start = _time_ms(item["from"], f"user_script #{k} from")
        stop = _time_ms(item["to"], f"user_script #{k} to")
        if start > stop:
            raise ValidationError(f"user_script #{k}: window is inverted")
        try:
            decision = Decision(item["decision"])
        except ValueError:
            raise SchemaError(f"user_script #{k}: decision must be accept|reject") from None
        entries.append(UserScriptEntry(start, stop, decision))
    return tuple(entries)


def _parse_delay_table(raw, use_defaults: bool) -> DelayTable:
    table = DelayTable(use_defaults=use_defaults)
    if raw is None:
        return table
    _require(isinstance(raw, list), "config.delays must be a list")
    for k, item in enumerate(raw):
        _require(isinstance(item, dict), f"delay entry #{k} must be an object")
        unknown = set(item) - {"from", "to", "delay_ms"}
        _require(not unknown, f"delay entry #{k}: unknown keys {sorted(unknown)}")
        for key in ("from", "to", "delay_ms"):
            _require(key in item, f"delay entry #{k}: missing {key!r}")
        delay = _number(item["delay_ms"], f"delay entry #{k} delay_ms")
        if delay < 0:
            raise ValidationError(f"delay entry #{k}: delay_ms must be non-negative")
        table.entries[(str(item["from"]).upper(), str(item["to"]).upper())] = delay
    return table


def _parse_config(raw) -> SimConfig:
    if raw is None:
        raw = {}
    _require(isinstance(raw, dict), "config must be an object")
    unknown = set(raw) - {"factors", "delays", "use_default_delays", "dwell", "eval_poll_ms"}
    _require(not unknown, f"config: unknown keys {sorted(unknown)}")
    catalog = parse_factor_catalog(raw.get("factors"))
    delay_table = _parse_delay_table(raw.get("delays"), bool(raw.get("use_default_delays", True)))
    dwell_raw = raw.get("dwell", {})
    _require(isinstance(dwell_raw, dict), "config.dwell must be an object")
    unknown = set(dwell_raw) - {"t_dwell_ms", "k_stable"}
    _require(not unknown, f"config.dwell: unknown keys {sorted(unknown)}")
    dwell = DwellConfig(
        t_dwell_ms=_time_ms(dwell_raw.get("t_dwell_ms", 5000), "t_dwell_ms"),
        k_stable=int(dwell_raw.get("k_stable", 3)),
    )
    if dwell.k_stable < 1:
        raise ValidationError("config.dwell.k_stable must be >= 1")
    eval_poll = raw.get("eval_poll_ms")
    if eval_poll is not None:
        eval_poll = _time_ms(eval_poll, "eval_poll_ms")
        if eval_poll == 0:
            raise ValidationError("eval_poll_ms must be positive")
    return SimConfig(catalog=catalog, delay_table=delay_table, dwell=dwell, eval_poll_ms=eval_poll)


def load_scenario(data) -> Scenario:
    """Parse and validate a scenario from bytes, text, or a decoded document."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc}") from None
    else:
        doc = data
    _require(isinstance(doc, dict), "scenario must be an object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, f"scenario: unknown top-level keys {sorted(unknown)}")
    for key in ("hosts", "policies", "applications"):
        _require(key in doc, f"scenario: missing {key!r}")

    hosts_raw = doc["hosts"]
    _require(isinstance(hosts_raw, list), "hosts must be a list")
    if len(hosts_raw) != 2:
        raise ValidationError(f"scenario needs exactly 2 hosts, got {len(hosts_raw)}")
    hosts = tuple(_parse_host(item, k) for k, item in enumerate(hosts_raw))
    if hosts[0].id == hosts[1].id:
        raise ValidationError("host ids must be distinct")

    policies_raw = doc["policies"]
    _require(isinstance(policies_raw, dict), "policies must map host id to a policy document")
    unknown = set(policies_raw) - {h.id for h in hosts}
    if unknown:
        raise UnknownReference(f"policies for unknown hosts: {sorted(unknown)}")
    policies = {}
    for host in hosts:
        if host.id not in policies_raw:
            raise UnknownReference(f"missing policy document for host {host.id!r}")
        policies[host.id] = parse_policy_document(policies_raw[host.id])

    apps_raw = doc["applications"]
    _require(isinstance(apps_raw, list), "applications must be a list")
    applications = tuple(_parse_application(item, k) for k, item in enumerate(apps_raw))
    seen = set()
    for app in applications:
        if app.id in seen:
            raise ValidationError(f"duplicate application id {app.id!r}")
        seen.add(app.id)

    events_raw = doc.get("events", [])
    _require(isinstance(events_raw, list), "events must be a list")
    events = tuple(_parse_event(item, k, hosts) for k, item in enumerate(events_raw))
    for prev, nxt in zip(events, events[1:]):
        if nxt.time < prev.time:
            raise EventOrderError(f"events not sorted by time: {nxt.time} after {prev.time}")

    user_script = _parse_user_script(doc.get("user_script", []))
    config = _parse_config(doc.get("config"))
    seed = doc.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool), "seed must be an integer")

    return Scenario(
        hosts=hosts,
        policies=policies,
        applications=applications,
        events=events,
        user_script=user_script,
        config=config,
        seed=seed,
    )


def load_scenario_file(path) -> Scenario:
    with open(path, "rb") as fh:
        return load_scenario(fh.read())


# -- simulation ---------------------------------------------------------------

class ScriptOracle:
    """Consumes scripted user decisions strictly in order; exhausted means reject."""

    def __init__(self, entries: tuple[UserScriptEntry, ...]):
        self._entries = entries
        self._pos = 0

    def __call__(self, channel_id: str, cost_rate: float, now: int) -> Decision:
        while self._pos < len(self._entries) and self._entries[self._pos].stop < now:
            self._pos += 1
        if self._pos < len(self._entries):
            entry = self._entries[self._pos]
            if entry.start <= now <= entry.stop:
                self._pos += 1
                return entry.decision
        return Decision.REJECT


def apply_sim_event(store: ContextStore, event: SimEvent, hosts: tuple[HostDef, HostDef]) -> None:
    """Translate one scenario event into context-store writes."""
    if event.kind is EventKind.SET_CONTEXT:
        store.put(ContextTuple(event.entity, event.feature, event.value, event.time))
    elif event.kind in (EventKind.INTERFACE_UP, EventKind.INTERFACE_DOWN):
        up = event.kind is EventKind.INTERFACE_UP
        store.put(ContextTuple(iface_entity(event.host, event.index), "available", up, event.time))
    else:
        entity = link_entity(hosts[0].id, event.local, hosts[1].id, event.remote)
        store.put(ContextTuple(entity, event.feature, event.value, event.time))


@dataclass
class _Tracker:
    """Time accounting for one channel across its application window."""

    window_start: int
    window_stop: int
    metrics: ChannelMetrics = field(default_factory=ChannelMetrics)
    seg_start: int = 0
    seg_state: Optional[ChannelState] = None
    seg_cost: Optional[float] = None
    seg_qos_bad: bool = False
    _cost_ms: float = 0.0
    _priced_ms: int = 0

    def boundary(self, t: int, state: ChannelState, cost: Optional[float], qos_bad: bool) -> None:
        self._close(min(t, self.window_stop))
        self.seg_start = t
        self.seg_state = state
        self.seg_cost = cost
        self.seg_qos_bad = qos_bad

    def finish(self) -> ChannelMetrics:
        self._close(self.window_stop)
        self.seg_state = None
        self.metrics.window_ms = self.window_stop - self.window_start
        if self._priced_ms > 0:
            self.metrics.mean_active_cost = self._cost_ms / self._priced_ms
        return self.metrics

    def _close(self, t: int) -> None:
        if self.seg_state is None:
            return
        dt = t - self.seg_start
        if dt <= 0:
            return
        if self.seg_state is ChannelState.ACTIVE:
            self.metrics.active_ms += dt
            if self.seg_cost is not None:  # mean is over the time the pair had a finite price
                self._cost_ms += self.seg_cost * dt
                self._priced_ms += dt
            if self.seg_qos_bad:
                self.metrics.qos_violation_ms += dt
        elif self.seg_state is ChannelState.SUSPENDED:
            self.metrics.suspended_ms += dt
        elif self.seg_state is ChannelState.ESTABLISHING:
            self.metrics.pre_establish_ms += dt


@dataclass
class _LiveChannel:
    channel: Channel
    app: ApplicationDef
    tracker: _Tracker


def run_simulation(scenario: Scenario) -> tuple[list[TraceRecord], Metrics]:
    """Run the scenario to completion and return the trace and per-channel metrics."""
    store = ContextStore()
    for host in scenario.hosts:
        for iface in host.interfaces:
            store.register_interface(iface.descriptor)
            entity = iface_entity(host.id, iface.descriptor.index)
            for feat in SNAPSHOT_DEFAULTS:  # fixed feature order keeps replay exact
                if feat in iface.initial:
                    store.put(ContextTuple(entity, feat, iface.initial[feat], 0))

    manager = ChannelManager(
        catalog=scenario.config.catalog,
        delay_table=scenario.config.delay_table,
        dwell=scenario.config.dwell,
        oracle=ScriptOracle(scenario.user_script),
    )
    host0, host1 = scenario.hosts
    pset0 = scenario.policies[host0.id]
    pset1 = scenario.policies[host1.id]

    # Merged timeline: app events sort before context events at the same
    # time, then input order; synthesized poll ticks come last.
    timeline: list[tuple[int, int, int, object]] = []
    seq = 0
    for app in scenario.applications:
        timeline.append((app.start, 0, seq, ("start", app)))
        seq += 1
        timeline.append((app.stop, 0, seq, ("stop", app)))
        seq += 1
    for event in scenario.events:
        timeline.append((event.time, 1, seq, event))
        seq += 1
    if scenario.config.eval_poll_ms and timeline:
        horizon = max(t for t, _, _, _ in timeline)
        step = scenario.config.eval_poll_ms
        tick = step
        while tick <= horizon:
            timeline.append((tick, 2, seq, "poll"))
            seq += 1
            tick += step
    timeline.sort(key=lambda item: (item[0], item[1], item[2]))

    log.info(
        "run: hosts=%s/%s apps=%d events=%d", host0.id, host1.id, len(scenario.applications), len(scenario.events)
    )
    trace: list[TraceRecord] = []
    live: list[_LiveChannel] = []
    finished: dict[str, ChannelMetrics] = {}

    def evaluate_channel(entry: _LiveChannel, now: int, description: str) -> None:
        channel = entry.channel
        local = store.snapshot_host(host0.id, now)
        remote = store.snapshot_host(host1.id, now)
        old_pair = channel.pair
        evaluation = manager.evaluate(channel, now, local, remote, pset0, pset1)
        channel.stability_count = evaluation.stability_count
        channel.last_best = evaluation.last_best
        if evaluation.action.kind is not ActionKind.STAY:
            apply_transition(channel, evaluation.action, now)
        if evaluation.action.kind is ActionKind.SWITCH:
            entry.tracker.metrics.switches += 1
        elif evaluation.action.kind is ActionKind.SUSPEND:
            entry.tracker.metrics.suspends += 1
        qos_bad = False
        if channel.state is ChannelState.ACTIVE:
            throughput = throughput_reading(local, remote, channel.pair)
            qos_bad = throughput < entry.app.qos.min_acceptable * entry.app.qos.min_throughput
        entry.tracker.boundary(now, channel.state, evaluation.chosen_cost, qos_bad)
        trace.append(
            TraceRecord(
                time=now,
                channel=channel.id,
                cause=evaluation.cause,
                action=evaluation.action.kind,
                old_pair=old_pair,
                new_pair=channel.pair,
                mmp=evaluation.mmp_local,
                cost=evaluation.chosen_cost,
                description=description,
                estimate=evaluation.estimate,
                current_throughput=evaluation.current_throughput,
            )
        )

    for now, _prio, _seq, payload in timeline:
        if isinstance(payload, tuple) and payload[0] == "start":
            app = payload[1]
            channel = Channel(
                id=app.id,
                request=ChannelRequest(app.id, app.traffic_class, app.direction, app.qos),
            )
            entry = _LiveChannel(
                channel=channel,
                app=app,
                tracker=_Tracker(window_start=app.start, window_stop=app.stop),
            )
            entry.tracker.boundary(now, ChannelState.ESTABLISHING, None, False)
            live.append(entry)
            log.debug("t=%d open channel %s", now, app.id)
            evaluate_channel(entry, now, "application started")
        elif isinstance(payload, tuple) and payload[0] == "stop":
            app = payload[1]
            for entry in live:
                if entry.channel.id != app.id:
                    continue
                old_pair = entry.channel.pair
                apply_transition(entry.channel, Action(ActionKind.TERMINATE), now)
                finished[app.id] = entry.tracker.finish()
                trace.append(
                    TraceRecord(
                        time=now,
                        channel=app.id,
                        cause=Cause.CONTEXT_EVENT,
                        action=ActionKind.TERMINATE,
                        old_pair=old_pair,
                        new_pair=None,
                        mmp=None,
                        cost=None,
                        description="application stopped",
                    )
                )
            live = [entry for entry in live if entry.channel.id != app.id]
        elif payload == "poll":
            for entry in list(live):
                evaluate_channel(entry, now, "periodic evaluation")
        else:
            event = payload
            apply_sim_event(store, event, scenario.hosts)
            for entry in list(live):
                evaluate_channel(entry, now, f"context event {event.kind.value}")

    # Applications whose stop never fired can only mean an unsorted timeline,
    # which load_scenario rejects; close anything left for safety.
    for entry in live:
        finished[entry.channel.id] = entry.tracker.finish()

    ordered = {app.id: finished[app.id] for app in scenario.applications if app.id in finished}
    log.info("run: finished with %d trace records", len(trace))
    return trace, Metrics(channels=ordered)


def serialize_trace(records: list[TraceRecord]) -> str:
    """JSON Lines, one record per line, fixed key order, deterministic bytes."""
    return "".join(json.dumps(r.to_json_obj(), separators=(",", ":")) + "\n" for r in records)


def serialize_metrics(metrics: Metrics) -> str:
    return json.dumps(metrics.to_json_obj(), indent=2, sort_keys=False) + "\n"
