"""Context data model and timestamped store.

Context is held as 4-tuples (entity, feature, value, time) with latest-wins
semantics per (entity, feature) key. The store keeps the full history so a
host snapshot can be assembled "as of" any past instant, and supports the
three access modes: explicit query, fixed-interval polling, and event-driven
subscriptions. Simulated time is integer milliseconds throughout.
"""

from __future__ import annotations

import re
import threading
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import InvalidInterval, InvalidTuple, TimeRegression, UnknownHost

Value = Union[int, float, str, bool]

# Well-known technology type names; tech_type is an open string so that
# technologies beyond these stay representable.
TECH_GSM = "GSM"
TECH_GPRS = "GPRS"
TECH_WLAN = "WLAN"
TECH_BLUETOOTH = "BLUETOOTH"

# Per-interface dynamic features and their fail-closed defaults: an interface
# that was never observed must not look selectable.
SNAPSHOT_DEFAULTS = {
    "available": False,
    "signal_strength": -120.0,
    "snr": 0.0,
    "charge_rate": 0.0,
    "power_draw": 0.0,
    "current_speed": 0.0,
}

E2E_FEATURES = ("rtt", "bandwidth_up", "bandwidth_down", "packet_loss_rate", "jitter")

_IFACE_RE = re.compile(r"^([A-Za-z0-9_-]+)\.if(\d+)$")
_LINK_RE = re.compile(r"^([A-Za-z0-9_-]+)\.if(\d+)~([A-Za-z0-9_-]+)\.if(\d+)$")


def iface_entity(host_id: str, index: int) -> str:
    """Canonical entity name for one network interface."""
    return f"{host_id}.if{index}"


def link_entity(host_a: str, index_a: int, host_b: str, index_b: int) -> str:
    """Canonical entity name for the end-to-end link between two interfaces."""
    return f"{host_a}.if{index_a}~{host_b}.if{index_b}"


@dataclass(frozen=True)
class ContextTuple:
    entity: str
    feature: str
    value: Value
    time: int

    def validate(self) -> None:
        if not self.entity or not self.feature:
            raise InvalidTuple("entity and feature must be non-empty")
        if not isinstance(self.time, int) or isinstance(self.time, bool) or self.time < 0:
            raise InvalidTuple(f"time must be a non-negative integer, got {self.time!r}")
        if not isinstance(self.value, (int, float, str, bool)):
            raise InvalidTuple(f"value must be a scalar, got {type(self.value).__name__}")


@dataclass(frozen=True)
class InterfaceDescriptor:
    host_id: str
    index: int
    tech_type: str
    max_speed: float  # kilobits/s
    subscribed: bool = True


@dataclass(frozen=True)
class InterfaceSnapshot:
    descriptor: InterfaceDescriptor
    available: bool
    signal_strength: float  # dBm
    snr: float  # dB
    charge_rate: float  # currency units per megabyte
    power_draw: float  # milliwatts
    current_speed: float  # kilobits/s


@dataclass(frozen=True)
class EndToEndQoS:
    rtt: float = 0.0  # milliseconds
    bandwidth_up: float = 0.0  # kilobits/s
    bandwidth_down: float = 0.0  # kilobits/s
    packet_loss_rate: float = 0.0  # fraction in [0, 1]
    jitter: float = 0.0  # milliseconds


@dataclass(frozen=True)
class HostContextView:
    """Instant context of one host: interface snapshots plus optional pair QoS."""

    host_id: str
    interfaces: tuple[InterfaceSnapshot, ...]
    e2e: dict[tuple[int, int], EndToEndQoS]
    as_of: int


@dataclass
class _Series:
    times: list[int] = field(default_factory=list)
    tuples: list[ContextTuple] = field(default_factory=list)


@dataclass
class _PollSub:
    sub_id: int
    entity: str
    feature: str
    interval: int
    sink: Callable[[Optional[ContextTuple]], None]
    next_tick: int


@dataclass
class _EventSub:
    sub_id: int
    entity: str
    feature: str
    predicate: Callable[[ContextTuple], bool]
    sink: Callable[[ContextTuple], None]


class ContextStore:
    """Latest-wins context storage with poll and event subscriptions.

    Writes are serialized by an internal lock; reads walk append-only series
    and therefore observe a consistent latest-wins state without locking.
    Inside the simulator everything runs on one event loop, so the lock only
    matters when the store is embedded elsewhere.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._series: dict[tuple[str, str], _Series] = {}
        self._hosts: dict[str, dict[int, InterfaceDescriptor]] = {}
        self._links: list[tuple[str, int, str, int]] = []
        self._polls: list[_PollSub] = []
        self._events: list[_EventSub] = []
        self._next_sub_id = 1
        self._advanced_to = 0

    # -- registration -----------------------------------------------------

    def register_interface(self, descriptor: InterfaceDescriptor) -> None:
        if descriptor.max_speed <= 0:
            raise InvalidTuple(f"max_speed must be positive, got {descriptor.max_speed}")
        with self._lock:
            per_host = self._hosts.setdefault(descriptor.host_id, {})
            if descriptor.index in per_host:
                raise InvalidTuple(
                    f"interface index {descriptor.index} already registered for {descriptor.host_id}"
                )
            per_host[descriptor.index] = descriptor

    def hosts(self) -> list[str]:
        return list(self._hosts)

    def interfaces(self, host_id: str) -> list[InterfaceDescriptor]:
        if host_id not in self._hosts:
            raise UnknownHost(host_id)
        return [self._hosts[host_id][i] for i in sorted(self._hosts[host_id])]

    # -- writes -----------------------------------------------------------

    def put(self, tup: ContextTuple) -> None:
        """Store a tuple as the latest value for its key and notify event subscribers."""
        tup.validate()
        with self._lock:
            series = self._series.setdefault((tup.entity, tup.feature), _Series())
            if series.times and tup.time < series.times[-1]:
                raise TimeRegression(
                    f"({tup.entity}, {tup.feature}) at t={tup.time} precedes stored t={series.times[-1]}"
                )
            series.times.append(tup.time)
            series.tuples.append(tup)
            m = _LINK_RE.match(tup.entity)
            if m:
                key = (m.group(1), int(m.group(2)), m.group(3), int(m.group(4)))
                if key not in self._links:
                    self._links.append(key)
            subs = [
                s
                for s in self._events
                if s.entity == tup.entity and s.feature == tup.feature and s.predicate(tup)
            ]
        for s in subs:  # registration order; sinks run outside the lock
            s.sink(tup)

    # -- reads ------------------------------------------------------------

    def query_latest(self, entity: str, feature: str) -> Optional[ContextTuple]:
        series = self._series.get((entity, feature))
        if series is None or not series.tuples:
            return None
        return series.tuples[-1]

    def _latest_at(self, entity: str, feature: str, at: int) -> Optional[ContextTuple]:
        series = self._series.get((entity, feature))
        if series is None:
            return None
        pos = bisect_right(series.times, at)
        if pos == 0:
            return None
        return series.tuples[pos - 1]

    # -- subscriptions ----------------------------------------------------

    def subscribe_poll(
        self,
        interval_ms: int,
        entity: str,
        feature: str,
        sink: Callable[[Optional[ContextTuple]], None],
    ) -> int:
        """Deliver the latest tuple (or None) for the key every interval tick.

        The first tick is the next multiple of the interval after the store's
        current advance position; ticks fire when advance() passes them.
        """
        if interval_ms <= 0:
            raise InvalidInterval(f"poll interval must be positive, got {interval_ms}")
        with self._lock:
            sub_id = self._next_sub_id
            self._next_sub_id += 1
            first = (self._advanced_to // interval_ms + 1) * interval_ms
            self._polls.append(_PollSub(sub_id, entity, feature, interval_ms, sink, first))
        return sub_id

    def subscribe_event(
        self,
        predicate: Callable[[ContextTuple], bool],
        entity: str,
        feature: str,
        sink: Callable[[ContextTuple], None],
    ) -> int:
        """Deliver exactly the puts on the key for which the predicate holds."""
        with self._lock:
            sub_id = self._next_sub_id
            self._next_sub_id += 1
            self._events.append(_EventSub(sub_id, entity, feature, predicate, sink))
        return sub_id

    def advance(self, now: int) -> None:
        """Advance simulated time, firing due poll ticks in time order.

        Ticks at equal times fire in subscription order. Advancing backwards
        is a no-op.
        """
        with self._lock:
            if now <= self._advanced_to:
                return
            due: list[tuple[int, int, _PollSub]] = []
            for sub in self._polls:
                while sub.next_tick <= now:
                    due.append((sub.next_tick, sub.sub_id, sub))
                    sub.next_tick += sub.interval
            self._advanced_to = now
        for _tick, _sid, sub in sorted(due, key=lambda d: (d[0], d[1])):
            sub.sink(self.query_latest(sub.entity, sub.feature))

    # -- snapshots ----------------------------------------------------------

    def snapshot_host(self, host_id: str, at: int) -> HostContextView:
        """Assemble the host's instant context from the latest tuples at or before `at`.

        Attributes never written take the fail-closed defaults; an e2e pair
        appears only if at least one of its features was written by `at`. For
        the link's second host, bandwidth_up/bandwidth_down are swapped so
        readings are always from the viewing host's perspective.
        """
        if host_id not in self._hosts:
            raise UnknownHost(host_id)
        snapshots = []
        for descr in self.interfaces(host_id):
            entity = iface_entity(host_id, descr.index)
            readings = {}
            for feat, default in SNAPSHOT_DEFAULTS.items():
                found = self._latest_at(entity, feat, at)
                readings[feat] = default if found is None else found.value
            snapshots.append(
                InterfaceSnapshot(
                    descriptor=descr,
                    available=bool(readings["available"]),
                    signal_strength=float(readings["signal_strength"]),
                    snr=float(readings["snr"]),
                    charge_rate=float(readings["charge_rate"]),
                    power_draw=float(readings["power_draw"]),
                    current_speed=float(readings["current_speed"]),
                )
            )
        e2e: dict[tuple[int, int], EndToEndQoS] = {}
        for host_a, ia, host_b, ib in self._links:
            if host_id == host_a:
                key, mirrored = (ia, ib), False
            elif host_id == host_b:
                key, mirrored = (ib, ia), True
            else:
                continue
            entity = link_entity(host_a, ia, host_b, ib)
            fields = {}
            written = False
            for feat in E2E_FEATURES:
                found = self._latest_at(entity, feat, at)
                if found is not None:
                    written = True
                    fields[feat] = float(found.value)
            if not written:
                continue
            if mirrored:
                up = fields.get("bandwidth_down", 0.0)
                down = fields.get("bandwidth_up", 0.0)
                fields["bandwidth_up"], fields["bandwidth_down"] = up, down
            e2e[key] = EndToEndQoS(**fields)
        return HostContextView(host_id=host_id, interfaces=tuple(snapshots), e2e=e2e, as_of=at)
