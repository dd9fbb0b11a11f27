"""Policy algebra, validation, parsing, and the traverse that picks the MMP.

A policy couples an optional traffic-class selector and an optional
requirement condition with a mandatory evaluation item (use / default /
priority / weight). Policies live in one of three scopes; the traverse scans
channel, then application, then device scope and returns the most matching
policy, or None when the decision falls back to the operating system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .context import InterfaceDescriptor
from .errors import ParseError, SchemaError, ValidationError

# Ceiling for priority values; mirrors the cost engine's finite MAX sentinel,
# where priority values land verbatim.
MAX_PRIORITY = 1_000_000


class TrafficClass(Enum):
    BULK_TRANSFER = "bulk_transfer"
    PRIORITY_TRAFFIC = "priority_traffic"
    INTERACTIVE = "interactive"
    RESPONSIVE = "responsive"
    REAL_TIME = "real_time"
    BANDWIDTH_INTENSIVE = "bandwidth_intensive"
    NETWORK_CONTROL = "network_control"


class Direction(Enum):
    SEND = "send"
    RECEIVE = "receive"
    BIDIRECTIONAL = "bidirectional"


class Scope(Enum):
    CHANNEL = "channel"
    APPLICATION = "application"
    DEVICE = "device"


class EndType(Enum):
    MASTER = "master"
    SLAVE = "slave"


class Metric(Enum):
    """Transmission properties a requirement condition may constrain."""

    RTT_MS = "rtt_ms"
    BANDWIDTH_UP_KBPS = "bandwidth_up_kbps"
    BANDWIDTH_DOWN_KBPS = "bandwidth_down_kbps"
    PACKET_LOSS = "packet_loss"
    SIGNAL_DBM = "signal_dbm"
    CHARGE_RATE = "charge_rate"
    SPEED_KBPS = "speed_kbps"


class Comparator(Enum):
    LE = "le"
    GE = "ge"


class FactorName(Enum):
    """Factors a weight policy may combine."""

    CHARGE_RATE = "charge_rate"
    RTT_MS = "rtt_ms"
    PACKET_LOSS = "packet_loss"
    SIGNAL_DBM = "signal_dbm"
    BANDWIDTH_KBPS = "bandwidth_kbps"
    POWER_MW = "power_mw"
    SPEED_KBPS = "speed_kbps"


@dataclass(frozen=True)
class Predicate:
    metric: Metric
    cmp: Comparator
    bound: float

    def holds(self, raw: float) -> bool:
        return raw <= self.bound if self.cmp is Comparator.LE else raw >= self.bound


RequirementCondition = tuple[Predicate, ...]


@dataclass(frozen=True)
class Target:
    """Interface selector: a concrete index or a technology type name."""

    index: Optional[int] = None
    tech: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "Target":
        if text.startswith("index:"):
            try:
                idx = int(text[len("index:"):])
            except ValueError:
                raise SchemaError(f"bad index target {text!r}") from None
            if idx < 0:
                raise SchemaError(f"index target must be non-negative, got {text!r}")
            return cls(index=idx)
        if not text:
            raise SchemaError("empty target")
        return cls(tech=text.upper())

    def matches(self, descriptor: InterfaceDescriptor) -> bool:
        if self.index is not None:
            return descriptor.index == self.index
        return descriptor.tech_type.upper() == self.tech

    def __str__(self) -> str:
        return f"index:{self.index}" if self.index is not None else str(self.tech)


@dataclass(frozen=True)
class UseItem:
    target: Target


@dataclass(frozen=True)
class DefaultItem:
    target: Target


@dataclass(frozen=True)
class PriorityItem:
    entries: tuple[tuple[Target, int], ...]


@dataclass(frozen=True)
class WeightItem:
    entries: tuple[tuple[FactorName, float], ...]


EvaluationItem = Union[UseItem, DefaultItem, PriorityItem, WeightItem]


@dataclass(frozen=True)
class Policy:
    id: str
    scope: Scope
    ei: EvaluationItem
    end_type: EndType
    order: int
    traffic_class: Optional[TrafficClass] = None
    direction: Optional[Direction] = None
    rc: RequirementCondition = ()


@dataclass(frozen=True)
class PolicySet:
    policies: tuple[Policy, ...]

    def __iter__(self):
        return iter(self.policies)

    def __len__(self) -> int:
        return len(self.policies)


EMPTY_POLICY_SET = PolicySet(())


@dataclass(frozen=True)
class QoSRequirement:
    """Per-channel QoS contract used to gate switching decisions."""

    min_throughput: float  # kilobits/s
    max_delay: float  # milliseconds
    max_cost_rate: float  # currency/MB
    max_disruption: float  # milliseconds of tolerable switch outage
    min_acceptable: float  # fraction of min_throughput still counted acceptable

    def validate(self) -> list[str]:
        out = []
        for name in ("min_throughput", "max_delay", "max_cost_rate", "max_disruption"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        if not 0 < self.min_acceptable <= 1:
            out.append("min_acceptable must be in (0, 1]")
        return out


@dataclass(frozen=True)
class ChannelRequest:
    application_id: str
    traffic_class: TrafficClass
    direction: Direction
    qos: QoSRequirement


# -- validation -------------------------------------------------------------

def validate_policy(policy: Policy) -> list[str]:
    """Return every violated invariant of the policy, or an empty list."""
    out = []
    if not policy.id:
        out.append("policy id is empty")
    ei = policy.ei
    if isinstance(ei, WeightItem):
        if not ei.entries:
            out.append("weight policy has no entries")
        else:
            for factor, w in ei.entries:
                if w < 0:
                    out.append(f"negative weight {w} for {factor.value}")
            total = math.fsum(w for _, w in ei.entries)
            if abs(total - 1.0) > 1e-9:
                out.append(f"weights sum to {total:.12g} != 1")
    elif isinstance(ei, PriorityItem):
        if not ei.entries:
            out.append("priority policy has no entries")
        seen = set()
        for target, value in ei.entries:
            if target in seen:
                out.append(f"duplicate target {target}")
            seen.add(target)
            if value < 0:
                out.append(f"negative priority {value} for {target}")
            elif value > MAX_PRIORITY:
                out.append(f"priority {value} for {target} exceeds {MAX_PRIORITY}")
    for pred in policy.rc:
        if not math.isfinite(pred.bound):
            out.append(f"non-finite bound for {pred.metric.value}")
    return out


# -- matching and traverse ----------------------------------------------------

def _direction_compatible(policy_dir: Direction, request_dir: Direction) -> bool:
    # A bidirectional policy covers any request; a one-way policy covers only
    # the same direction, so a bidirectional request needs a bidirectional
    # (or unspecified) policy.
    if policy_dir is Direction.BIDIRECTIONAL:
        return True
    return policy_dir is request_dir


def matching_value(policy: Policy, request: ChannelRequest) -> Optional[int]:
    """Specificity of the policy against the request.

    Returns None when a specified selector conflicts; otherwise the number of
    specified selectors that match. An unconstrained policy matches anything
    with value 0.
    """
    mv = 0
    if policy.traffic_class is not None:
        if policy.traffic_class is not request.traffic_class:
            return None
        mv += 1
    if policy.direction is not None:
        if not _direction_compatible(policy.direction, request.direction):
            return None
        mv += 1
    return mv


_SCOPE_ORDER = (Scope.CHANNEL, Scope.APPLICATION, Scope.DEVICE)


def traverse_policies(policies: PolicySet, request: ChannelRequest) -> Optional[Policy]:
    """Find the most matching policy for the request.

    Scopes are scanned channel, application, device; within the first scope
    holding any match, the highest matching value wins, ties broken by
    declaration order (earlier wins). Returns None when nothing matches
    anywhere, leaving the decision to the OS fallback.
    """
    for scope in _SCOPE_ORDER:
        best: Optional[Policy] = None
        best_key: Optional[tuple[int, int]] = None
        for policy in policies:
            if policy.scope is not scope:
                continue
            mv = matching_value(policy, request)
            if mv is None:
                continue
            key = (-mv, policy.order)
            if best_key is None or key < best_key:
                best, best_key = policy, key
        if best is not None:
            return best
    return None


# -- parsing ------------------------------------------------------------------

_POLICY_KEYS = {
    "id", "scope", "traffic_class", "direction", "rc", "end_type",
    "use", "default", "priority", "weight",
}
_EI_KEYS = ("use", "default", "priority", "weight")


def _enum_value(enum_cls, raw, what: str):
    try:
        return enum_cls(raw)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise SchemaError(f"{what} {raw!r} is not one of: {choices}") from None


def _require_number(raw, what: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise SchemaError(f"{what} must be a number, got {raw!r}")
    return float(raw)


def _parse_rc(raw, policy_id: str) -> RequirementCondition:
    if not isinstance(raw, list):
        raise SchemaError(f"policy {policy_id!r}: rc must be a list")
    preds = []
    for item in raw:
        if not isinstance(item, dict) or set(item) != {"metric", "cmp", "bound"}:
            raise SchemaError(f"policy {policy_id!r}: rc entries need exactly metric/cmp/bound")
        metric = _enum_value(Metric, item["metric"], "metric")
        cmp = _enum_value(Comparator, item["cmp"], "cmp")
        bound = _require_number(item["bound"], "bound")
        preds.append(Predicate(metric, cmp, bound))
    return tuple(preds)


def _parse_ei(obj: dict, policy_id: str) -> EvaluationItem:
    present = [k for k in _EI_KEYS if k in obj]
    if len(present) != 1:
        raise SchemaError(
            f"policy {policy_id!r}: exactly one of use/default/priority/weight required, "
            f"got {present or 'none'}"
        )
    kind = present[0]
    raw = obj[kind]
    if kind in ("use", "default"):
        if not isinstance(raw, str):
            raise SchemaError(f"policy {policy_id!r}: {kind} target must be a string")
        target = Target.parse(raw)
        return UseItem(target) if kind == "use" else DefaultItem(target)
    if kind == "priority":
        if not isinstance(raw, list):
            raise SchemaError(f"policy {policy_id!r}: priority must be a list")
        entries = []
        for item in raw:
            if not isinstance(item, dict) or set(item) != {"target", "value"}:
                raise SchemaError(f"policy {policy_id!r}: priority entries need target/value")
            if not isinstance(item["target"], str):
                raise SchemaError(f"policy {policy_id!r}: priority target must be a string")
            value = item["value"]
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"policy {policy_id!r}: priority value must be an integer")
            entries.append((Target.parse(item["target"]), value))
        return PriorityItem(tuple(entries))
    if not isinstance(raw, list):
        raise SchemaError(f"policy {policy_id!r}: weight must be a list")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or set(item) != {"factor", "w"}:
            raise SchemaError(f"policy {policy_id!r}: weight entries need factor/w")
        factor = _enum_value(FactorName, item["factor"], "factor")
        entries.append((factor, _require_number(item["w"], "weight")))
    return WeightItem(tuple(entries))


def parse_policy_document(doc) -> PolicySet:
    """Build a validated PolicySet from an already-decoded policy document."""
    if not isinstance(doc, dict):
        raise SchemaError("policy document must be an object")
    unknown = set(doc) - {"policies"}
    if unknown:
        raise SchemaError(f"unknown top-level keys: {sorted(unknown)}")
    if "policies" not in doc or not isinstance(doc["policies"], list):
        raise SchemaError('policy document needs a "policies" list')
    policies = []
    for order, obj in enumerate(doc["policies"]):
        if not isinstance(obj, dict):
            raise SchemaError(f"policy #{order} must be an object")
        policy_id = obj.get("id", f"#{order}")
        unknown = set(obj) - _POLICY_KEYS
        if unknown:
            raise SchemaError(f"policy {policy_id!r}: unknown keys {sorted(unknown)}")
        for key in ("id", "scope", "end_type"):
            if key not in obj:
                raise SchemaError(f"policy {policy_id!r}: missing {key!r}")
        if not isinstance(obj["id"], str):
            raise SchemaError(f"policy #{order}: id must be a string")
        policies.append(
            Policy(
                id=obj["id"],
                scope=_enum_value(Scope, obj["scope"], "scope"),
                ei=_parse_ei(obj, policy_id),
                end_type=_enum_value(EndType, obj["end_type"], "end_type"),
                order=order,
                traffic_class=(
                    _enum_value(TrafficClass, obj["traffic_class"], "traffic_class")
                    if "traffic_class" in obj
                    else None
                ),
                direction=(
                    _enum_value(Direction, obj["direction"], "direction")
                    if "direction" in obj
                    else None
                ),
                rc=_parse_rc(obj["rc"], policy_id) if "rc" in obj else (),
            )
        )
    violations = []
    for policy in policies:
        violations.extend(f"policy {policy.id!r}: {v}" for v in validate_policy(policy))
    if violations:
        raise ValidationError(violations)
    return PolicySet(tuple(policies))


def parse_policy_set(data) -> PolicySet:
    """Parse a policy document from bytes or text (UTF-8 JSON)."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return parse_policy_document(doc)
