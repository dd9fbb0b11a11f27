"""Cost structure computation for interface pairs.

Given the most matching policy and a host's instant context, this module
qualifies interfaces (availability, subscription, requirement condition) and
fills an m x n cost matrix, or an m-vector when only local factors are
referenced. INFINITE marks an unusable entry; qualified entries start at the
finite MAX sentinel and are then lowered by the policy's evaluation item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .context import EndToEndQoS, HostContextView, InterfaceSnapshot
from .errors import MissingContext, MissingReading, SchemaError, ShapeError
from .policy import (
    DefaultItem,
    FactorName,
    Metric,
    Policy,
    PriorityItem,
    RequirementCondition,
    UseItem,
    WeightItem,
)

MAX_COST = 1_000_000.0
INFINITE = math.inf

# Requirement metrics that are defined per interface pair rather than per
# local interface.
_E2E_METRICS = frozenset(
    {Metric.RTT_MS, Metric.BANDWIDTH_UP_KBPS, Metric.BANDWIDTH_DOWN_KBPS, Metric.PACKET_LOSS}
)


class ShapeTag(Enum):
    MATRIX = "matrix"
    VECTOR = "vector"


class NormDirection(Enum):
    LOWER_IS_BETTER = "lower"
    HIGHER_IS_BETTER = "higher"


@dataclass(frozen=True)
class FactorSpec:
    name: FactorName
    lo: float
    hi: float
    direction: NormDirection
    end_to_end: bool


@dataclass(frozen=True)
class CostMatrix:
    rows: int
    cols: int
    entries: tuple[tuple[float, ...], ...]  # row-major, rows x cols
    shape: ShapeTag

    def entry(self, i: int, j: int) -> float:
        return self.entries[i][j]

    def to_lists(self) -> list[list[float]]:
        return [list(row) for row in self.entries]


def is_finite_cost(value: float) -> bool:
    return value != INFINITE


def default_factor_catalog() -> dict[FactorName, FactorSpec]:
    """Built-in normalization ranges; scenario config may override per factor."""
    specs = [
        FactorSpec(FactorName.CHARGE_RATE, 0.0, 10.0, NormDirection.LOWER_IS_BETTER, False),
        FactorSpec(FactorName.RTT_MS, 0.0, 500.0, NormDirection.LOWER_IS_BETTER, True),
        FactorSpec(FactorName.PACKET_LOSS, 0.0, 1.0, NormDirection.LOWER_IS_BETTER, True),
        FactorSpec(FactorName.SIGNAL_DBM, -100.0, -40.0, NormDirection.HIGHER_IS_BETTER, False),
        FactorSpec(FactorName.BANDWIDTH_KBPS, 0.0, 10000.0, NormDirection.HIGHER_IS_BETTER, True),
        FactorSpec(FactorName.POWER_MW, 0.0, 2000.0, NormDirection.LOWER_IS_BETTER, False),
        FactorSpec(FactorName.SPEED_KBPS, 0.0, 10000.0, NormDirection.HIGHER_IS_BETTER, False),
    ]
    return {spec.name: spec for spec in specs}


def parse_factor_catalog(raw) -> dict[FactorName, FactorSpec]:
    """Merge factor config entries over the default catalog.

    Expected shape: [{"factor", "lo", "hi", "direction" ("lower"|"higher"),
    "end_to_end": bool}, ...].
    """
    catalog = default_factor_catalog()
    if raw is None:
        return catalog
    if not isinstance(raw, list):
        raise SchemaError("factor catalog must be a list")
    for item in raw:
        if not isinstance(item, dict):
            raise SchemaError("factor catalog entries must be objects")
        unknown = set(item) - {"factor", "lo", "hi", "direction", "end_to_end"}
        if unknown:
            raise SchemaError(f"factor entry: unknown keys {sorted(unknown)}")
        try:
            name = FactorName(item["factor"])
        except (KeyError, ValueError):
            raise SchemaError(f"bad factor name in {item!r}") from None
        base = catalog[name]
        lo = float(item.get("lo", base.lo))
        hi = float(item.get("hi", base.hi))
        if not lo < hi:
            raise SchemaError(f"factor {name.value}: lo must be < hi")
        direction = base.direction
        if "direction" in item:
            try:
                direction = NormDirection(item["direction"])
            except ValueError:
                raise SchemaError(f"factor {name.value}: direction must be lower|higher") from None
        end_to_end = bool(item.get("end_to_end", base.end_to_end))
        catalog[name] = FactorSpec(name, lo, hi, direction, end_to_end)
    return catalog


# -- readings -----------------------------------------------------------------

def metric_reading(metric: Metric, snap: InterfaceSnapshot, e2e: Optional[EndToEndQoS]) -> float:
    if metric in _E2E_METRICS:
        if e2e is None:
            raise MissingContext(f"{metric.value} needs end-to-end data for the pair")
        return {
            Metric.RTT_MS: e2e.rtt,
            Metric.BANDWIDTH_UP_KBPS: e2e.bandwidth_up,
            Metric.BANDWIDTH_DOWN_KBPS: e2e.bandwidth_down,
            Metric.PACKET_LOSS: e2e.packet_loss_rate,
        }[metric]
    return {
        Metric.SIGNAL_DBM: snap.signal_strength,
        Metric.CHARGE_RATE: snap.charge_rate,
        Metric.SPEED_KBPS: snap.current_speed,
    }[metric]


def factor_reading(name: FactorName, snap: InterfaceSnapshot, e2e: Optional[EndToEndQoS]) -> float:
    if name in (FactorName.RTT_MS, FactorName.PACKET_LOSS, FactorName.BANDWIDTH_KBPS):
        if e2e is None:
            raise MissingReading(f"{name.value} needs end-to-end data for the pair")
        if name is FactorName.RTT_MS:
            return e2e.rtt
        if name is FactorName.PACKET_LOSS:
            return e2e.packet_loss_rate
        return min(e2e.bandwidth_up, e2e.bandwidth_down)
    return {
        FactorName.CHARGE_RATE: snap.charge_rate,
        FactorName.SIGNAL_DBM: snap.signal_strength,
        FactorName.POWER_MW: snap.power_draw,
        FactorName.SPEED_KBPS: snap.current_speed,
    }[name]


# -- operations ---------------------------------------------------------------

def requirement_satisfied(
    rc: RequirementCondition,
    snap: InterfaceSnapshot,
    e2e: Optional[EndToEndQoS] = None,
) -> bool:
    """True iff every predicate holds against the readings; empty rc is true."""
    for pred in rc:
        if not pred.holds(metric_reading(pred.metric, snap, e2e)):
            return False
    return True


def normalize_factor(spec: FactorSpec, raw: float) -> float:
    """Map a raw reading into [0, 1] cost space: 0 best, 1 worst, clamped."""
    t = (raw - spec.lo) / (spec.hi - spec.lo)
    t = min(1.0, max(0.0, t))
    return t if spec.direction is NormDirection.LOWER_IS_BETTER else 1.0 - t


def weight_cost(
    entries: tuple[tuple[FactorName, float], ...],
    readings: dict[FactorName, float],
    catalog: dict[FactorName, FactorSpec],
) -> float:
    """Sum of weight times normalized reading over the entries; in [0, 1] when weights sum to 1."""
    total = 0.0
    for name, w in entries:
        if name not in readings:
            raise MissingReading(f"no reading for factor {name.value}")
        total += w * normalize_factor(catalog[name], readings[name])
    return total


def policy_uses_e2e(policy: Policy, catalog: dict[FactorName, FactorSpec]) -> bool:
    if any(pred.metric in _E2E_METRICS for pred in policy.rc):
        return True
    if isinstance(policy.ei, WeightItem):
        return any(catalog[name].end_to_end for name, _ in policy.ei.entries)
    return False


def _qualify(
    snap: InterfaceSnapshot,
    rc: RequirementCondition,
    e2e: Optional[EndToEndQoS],
    needs_e2e: bool,
) -> bool:
    if not snap.available or not snap.descriptor.subscribed:
        return False
    if needs_e2e and e2e is None:
        # Fail closed: a pair the MMP wants judged on e2e data but that was
        # never measured must not be selectable.
        return False
    return requirement_satisfied(rc, snap, e2e)


def compute_cost_matrix(
    mmp: Policy,
    local: HostContextView,
    catalog: dict[FactorName, FactorSpec],
    remote_iface_count: Optional[int] = None,
) -> CostMatrix:
    """Fill the cost structure for this host under its most matching policy.

    Per remote column (or the single vector column): unavailable or
    unsubscribed interfaces and pairs failing the requirement condition get
    INFINITE; qualified entries start at MAX and are then assigned by the
    evaluation item. A use/default assignment stops the column scan at the
    first matching interface, so later qualified rows keep MAX as fallback.
    """
    snaps = local.interfaces
    m = len(snaps)
    if m == 0:
        raise ShapeError(f"host {local.host_id} has no interfaces")
    uses_e2e = policy_uses_e2e(mmp, catalog)
    if uses_e2e:
        if remote_iface_count is None or remote_iface_count < 1:
            raise ShapeError("MMP references end-to-end factors but remote interface count is unknown")
        n, shape = remote_iface_count, ShapeTag.MATRIX
    else:
        n, shape = 1, ShapeTag.VECTOR

    columns: list[list[float]] = []
    for j in range(n):
        col = [INFINITE] * m
        qualified: list[int] = []
        for i, snap in enumerate(snaps):
            e2e = local.e2e.get((snap.descriptor.index, j)) if uses_e2e else None
            if _qualify(snap, mmp.rc, e2e, uses_e2e):
                col[i] = MAX_COST
                qualified.append(i)
        ei = mmp.ei
        if isinstance(ei, (UseItem, DefaultItem)):
            for i in qualified:
                if ei.target.matches(snaps[i].descriptor):
                    col[i] = 0.0
                    break
        elif isinstance(ei, PriorityItem):
            for i in qualified:
                for target, value in ei.entries:
                    if target.matches(snaps[i].descriptor):
                        col[i] = float(value)
                        break
        elif isinstance(ei, WeightItem):
            for i in qualified:
                snap = snaps[i]
                e2e = local.e2e.get((snap.descriptor.index, j)) if uses_e2e else None
                readings = {name: factor_reading(name, snap, e2e) for name, _ in ei.entries}
                col[i] = weight_cost(ei.entries, readings, catalog)
        columns.append(col)

    entries = tuple(tuple(columns[j][i] for j in range(n)) for i in range(m))
    return CostMatrix(rows=m, cols=n, entries=entries, shape=shape)


def fallback_cost_vector(local: HostContextView) -> CostMatrix:
    """OS-fallback cost structure: prefer the lowest-index available subscribed interface."""
    entries = []
    chosen = False
    for snap in local.interfaces:
        if not snap.available or not snap.descriptor.subscribed:
            entries.append((INFINITE,))
        elif not chosen:
            entries.append((0.0,))
            chosen = True
        else:
            entries.append((MAX_COST,))
    if not entries:
        raise ShapeError(f"host {local.host_id} has no interfaces")
    return CostMatrix(rows=len(entries), cols=1, entries=tuple(entries), shape=ShapeTag.VECTOR)


def broadcast_to_matrix(cm: CostMatrix, cols: int) -> CostMatrix:
    """Expand a vector to a matrix with identical columns; matrices pass through."""
    if cm.shape is ShapeTag.MATRIX:
        return cm
    if cols < 1:
        raise ShapeError("cannot broadcast to zero columns")
    entries = tuple(tuple(row[0] for _ in range(cols)) for row in cm.entries)
    return CostMatrix(rows=cm.rows, cols=cols, entries=entries, shape=ShapeTag.MATRIX)
