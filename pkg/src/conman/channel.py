"""Channel lifecycle and the end-to-end selection/switching logic.

The two ends' channel end types pick the decision mode by XOR: equal types
mean peer-to-peer, different types mean master-slave. Selection minimizes
cost; switching an active channel is additionally gated by dwell time, a
candidate-stability count, the QoS impact estimate, and, when the candidate
costs more than the user accepts, by an injected user decision oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .context import HostContextView
from .costs import (
    CostMatrix,
    FactorSpec,
    ShapeTag,
    broadcast_to_matrix,
    compute_cost_matrix,
    fallback_cost_vector,
    is_finite_cost,
    policy_uses_e2e,
)
from .errors import IllegalTransition, ShapeMismatch, UnknownTechPair
from .policy import (
    ChannelRequest,
    EndType,
    FactorName,
    Policy,
    PolicySet,
    QoSRequirement,
    traverse_policies,
)

Pair = tuple[int, int]


class Mode(Enum):
    MASTER_SLAVE = "master_slave"
    PEER_TO_PEER = "peer_to_peer"


class ChannelState(Enum):
    ESTABLISHING = "establishing"
    ACTIVE = "active"
    SUSPENDED = "suspended"
    TERMINATED = "terminated"


class ActionKind(Enum):
    STAY = "stay"
    SWITCH = "switch"
    SUSPEND = "suspend"
    RESUME = "resume"
    TERMINATE = "terminate"


class Cause(Enum):
    ESTABLISH = "establish"
    CONTEXT_EVENT = "context_event"
    QOS_GUARD = "qos_guard"
    COST_PROMPT = "cost_prompt"
    NO_CANDIDATE = "no_candidate"


class Decision(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


# (channel id, cost rate, simulated time) -> Decision. Must be deterministic
# for identical inputs within one run.
UserDecisionOracle = Callable[[str, float, int], Decision]


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    pair: Optional[Pair] = None


@dataclass
class Channel:
    """State machine of one logical end-to-end link."""

    id: str
    request: ChannelRequest
    state: ChannelState = ChannelState.ESTABLISHING
    local_if: Optional[int] = None
    remote_if: Optional[int] = None
    last_switch_time: Optional[int] = None
    stability_count: int = 0
    last_best: Optional[Pair] = None

    @property
    def pair(self) -> Optional[Pair]:
        if self.state is ChannelState.ACTIVE:
            return (self.local_if, self.remote_if)
        return None


@dataclass(frozen=True)
class SwitchEstimate:
    switch_delay: float  # ms of outage for the crossing
    projected_throughput: float  # kbps on the candidate
    projected_delay: float  # ms on the candidate
    cost_rate: float  # currency/MB on the candidate
    acceptable_qos: bool
    acceptable_cost: bool


@dataclass(frozen=True)
class DwellConfig:
    t_dwell_ms: int = 5000  # minimum time between switches
    k_stable: int = 3  # consecutive best evaluations required


@dataclass
class DelayTable:
    """Switch-outage lookup keyed by ordered (from_tech, to_tech) pairs."""

    entries: dict[tuple[str, str], float] = field(default_factory=dict)
    use_defaults: bool = True

    INTRA_DEFAULT_MS = 50.0
    VERTICAL_DEFAULT_MS = 1000.0

    def lookup(self, from_tech: str, to_tech: str) -> float:
        key = (from_tech.upper(), to_tech.upper())
        if key in self.entries:
            return self.entries[key]
        if not self.use_defaults:
            raise UnknownTechPair(f"no switch delay for {key[0]} -> {key[1]}")
        return self.INTRA_DEFAULT_MS if key[0] == key[1] else self.VERTICAL_DEFAULT_MS


@dataclass(frozen=True)
class Evaluation:
    """Outcome of one evaluation pass: what to do plus the bookkeeping to store back."""

    action: Action
    cause: Cause
    mode: Mode
    mmp_local: Optional[str]
    mmp_remote: Optional[str]
    best_pair: Optional[Pair]
    chosen_pair: Optional[Pair]  # pair in effect once the action is applied
    chosen_cost: Optional[float]
    stability_count: int
    last_best: Optional[Pair]
    estimate: Optional[SwitchEstimate] = None
    current_throughput: Optional[float] = None  # reading for the pre-action pair, when estimated


def decision_mode(end_a: EndType, end_b: EndType) -> Mode:
    """XOR of the end types: equal ends cooperate peer-to-peer, unequal ends master-slave."""
    return Mode.PEER_TO_PEER if end_a is end_b else Mode.MASTER_SLAVE


def _check_shapes(c_m: CostMatrix, c_s: CostMatrix) -> None:
    if c_m.shape is not ShapeTag.MATRIX or c_s.shape is not ShapeTag.MATRIX:
        raise ShapeMismatch("selection needs matrices; broadcast vectors first")
    if c_m.cols != c_s.rows or c_m.rows != c_s.cols:
        raise ShapeMismatch(
            f"master {c_m.rows}x{c_m.cols} does not transpose-match slave {c_s.rows}x{c_s.cols}"
        )


def select_master_slave(c_m: CostMatrix, c_s: CostMatrix) -> Optional[Pair]:
    """Master-slave selection.

    The master collects every finite-minimum pair (x, y) of its matrix; a
    unique minimum wins outright. Otherwise the slave looks the exchanged
    pairs (y, x) up in its own matrix and returns the cheapest, ties broken
    lexicographically by (y, x). Candidates the slave prices INFINITE are
    unusable at its end; when that leaves nothing, there is no valid
    connection.
    """
    _check_shapes(c_m, c_s)
    best_val: Optional[float] = None
    for i in range(c_m.rows):
        for j in range(c_m.cols):
            v = c_m.entries[i][j]
            if is_finite_cost(v) and (best_val is None or v < best_val):
                best_val = v
    if best_val is None:
        return None
    candidates = [
        (x, y)
        for x in range(c_m.rows)
        for y in range(c_m.cols)
        if c_m.entries[x][y] == best_val
    ]
    if len(candidates) == 1:
        chosen = candidates[0]
    else:
        chosen = min(candidates, key=lambda p: (c_s.entries[p[1]][p[0]], (p[1], p[0])))
    if not is_finite_cost(c_s.entries[chosen[1]][chosen[0]]):
        return None
    return chosen


def select_peer_to_peer(c_a: CostMatrix, c_b: CostMatrix) -> Optional[Pair]:
    """Minimize the pair sum c_a[i][j] + c_b[j][i] over pairs finite at both ends."""
    _check_shapes(c_a, c_b)
    best: Optional[Pair] = None
    best_sum = math.inf
    for i in range(c_a.rows):
        for j in range(c_a.cols):
            a = c_a.entries[i][j]
            b = c_b.entries[j][i]
            if not (is_finite_cost(a) and is_finite_cost(b)):
                continue
            s = a + b
            if s < best_sum:
                best, best_sum = (i, j), s
    return best


def pair_valid(c_local: CostMatrix, c_remote: CostMatrix, pair: Pair) -> bool:
    i, j = pair
    if not (0 <= i < c_local.rows and 0 <= j < c_local.cols):
        return False
    return is_finite_cost(c_local.entries[i][j]) and is_finite_cost(c_remote.entries[j][i])


def throughput_reading(local: HostContextView, remote: HostContextView, pair: Pair) -> float:
    """Usable throughput of a pair: measured e2e bandwidth if known, else the ends' link speeds."""
    i, j = pair
    qos = local.e2e.get((i, j))
    if qos is not None:
        return min(qos.bandwidth_up, qos.bandwidth_down)
    local_speed = local.interfaces[i].current_speed
    remote_speed = remote.interfaces[j].current_speed
    return min(local_speed, remote_speed)


def estimate_switch(
    current: Optional[Pair],
    candidate: Pair,
    local: HostContextView,
    remote: HostContextView,
    req: QoSRequirement,
    delay_table: DelayTable,
) -> SwitchEstimate:
    """Estimate the outage and the candidate's QoS/cost against the channel contract.

    With no current pair (initial establishment or resume from suspension)
    there is nothing to disrupt, so the switch delay is zero and acceptability
    rests on the projections alone.
    """
    k, l = candidate
    if current is None:
        switch_delay = 0.0
    else:
        from_tech = local.interfaces[current[0]].descriptor.tech_type
        to_tech = local.interfaces[k].descriptor.tech_type
        switch_delay = delay_table.lookup(from_tech, to_tech)
    projected_throughput = throughput_reading(local, remote, candidate)
    qos = local.e2e.get((k, l))
    projected_delay = qos.rtt if qos is not None else 0.0
    cost_rate = local.interfaces[k].charge_rate
    acceptable_qos = (
        switch_delay <= req.max_disruption
        and projected_throughput >= req.min_throughput
        and projected_delay <= req.max_delay
    )
    return SwitchEstimate(
        switch_delay=switch_delay,
        projected_throughput=projected_throughput,
        projected_delay=projected_delay,
        cost_rate=cost_rate,
        acceptable_qos=acceptable_qos,
        acceptable_cost=cost_rate <= req.max_cost_rate,
    )


def _end_type(mmp: Optional[Policy]) -> EndType:
    # A host whose decision fell back to the OS contributes the passive end.
    return mmp.end_type if mmp is not None else EndType.SLAVE


def _cost_structure(
    mmp: Optional[Policy],
    view: HostContextView,
    catalog,
    other_iface_count: int,
) -> CostMatrix:
    if mmp is None:
        return fallback_cost_vector(view)
    remote = other_iface_count if policy_uses_e2e(mmp, catalog) else None
    return compute_cost_matrix(mmp, view, catalog, remote_iface_count=remote)


def _select(mode: Mode, local_is_master: bool, c_local: CostMatrix, c_remote: CostMatrix) -> Optional[Pair]:
    if mode is Mode.PEER_TO_PEER:
        return select_peer_to_peer(c_local, c_remote)
    if local_is_master:
        return select_master_slave(c_local, c_remote)
    found = select_master_slave(c_remote, c_local)
    if found is None:
        return None
    x, y = found  # (remote_if, local_if) from the master's perspective
    return (y, x)


def _pair_cost(mode: Mode, local_is_master: bool, c_local: CostMatrix, c_remote: CostMatrix, pair: Pair) -> float:
    i, j = pair
    if mode is Mode.PEER_TO_PEER:
        return c_local.entries[i][j] + c_remote.entries[j][i]
    return c_local.entries[i][j] if local_is_master else c_remote.entries[j][i]


@dataclass(frozen=True)
class SelectionOutcome:
    """One traverse -> cost -> select pass, pairs expressed local-first."""

    mmp_local: Optional[Policy]
    mmp_remote: Optional[Policy]
    mode: Mode
    local_is_master: bool
    c_local: CostMatrix
    c_remote: CostMatrix
    best: Optional[Pair]

    def pair_cost(self, pair: Pair) -> float:
        return _pair_cost(self.mode, self.local_is_master, self.c_local, self.c_remote, pair)

    def pair_valid(self, pair: Pair) -> bool:
        return pair_valid(self.c_local, self.c_remote, pair)


def run_selection(
    request: ChannelRequest,
    local: HostContextView,
    remote: HostContextView,
    local_policies: PolicySet,
    remote_policies: PolicySet,
    catalog: dict[FactorName, FactorSpec],
) -> SelectionOutcome:
    """Traverse each side's policies, build both cost structures, pick the best pair."""
    mmp_local = traverse_policies(local_policies, request)
    mmp_remote = traverse_policies(remote_policies, request)
    c_local = broadcast_to_matrix(
        _cost_structure(mmp_local, local, catalog, len(remote.interfaces)),
        len(remote.interfaces),
    )
    c_remote = broadcast_to_matrix(
        _cost_structure(mmp_remote, remote, catalog, len(local.interfaces)),
        len(local.interfaces),
    )
    local_end = _end_type(mmp_local)
    remote_end = _end_type(mmp_remote)
    mode = decision_mode(local_end, remote_end)
    local_is_master = mode is Mode.MASTER_SLAVE and local_end is EndType.MASTER
    best = _select(mode, local_is_master, c_local, c_remote)
    return SelectionOutcome(
        mmp_local=mmp_local,
        mmp_remote=mmp_remote,
        mode=mode,
        local_is_master=local_is_master,
        c_local=c_local,
        c_remote=c_remote,
        best=best,
    )


def evaluate_event(
    channel: Channel,
    now: int,
    local: HostContextView,
    remote: HostContextView,
    local_policies: PolicySet,
    remote_policies: PolicySet,
    catalog,
    delay_table: DelayTable,
    oracle: UserDecisionOracle,
    dwell: DwellConfig,
) -> Evaluation:
    """Run one traverse -> cost -> select pass and decide the channel's action.

    Pure: identical inputs (including the oracle function) produce identical
    evaluations; the caller stores stability_count/last_best back and applies
    the action via apply_transition.
    """
    if channel.state is ChannelState.TERMINATED:
        raise IllegalTransition("cannot evaluate a terminated channel")

    outcome = run_selection(channel.request, local, remote, local_policies, remote_policies, catalog)
    best = outcome.best

    def done(
        action: Action,
        cause: Cause,
        chosen: Optional[Pair],
        stability: int,
        last_best: Optional[Pair],
        estimate: Optional[SwitchEstimate] = None,
        current_throughput: Optional[float] = None,
    ) -> Evaluation:
        cost = outcome.pair_cost(chosen) if chosen else None
        if cost is not None and not is_finite_cost(cost):
            # A kept pair the fresh matrices price INFINITE has no usable cost.
            cost = None
        return Evaluation(
            action=action,
            cause=cause,
            mode=outcome.mode,
            mmp_local=outcome.mmp_local.id if outcome.mmp_local else None,
            mmp_remote=outcome.mmp_remote.id if outcome.mmp_remote else None,
            best_pair=best,
            chosen_pair=chosen,
            chosen_cost=cost,
            stability_count=stability,
            last_best=last_best,
            estimate=estimate,
            current_throughput=current_throughput,
        )

    req = channel.request.qos
    current = channel.pair

    if best is None:
        if channel.state is ChannelState.ESTABLISHING:
            return done(Action(ActionKind.SUSPEND), Cause.NO_CANDIDATE, None, 0, None)
        if channel.state is ChannelState.ACTIVE:
            if not outcome.pair_valid(current):
                return done(Action(ActionKind.SUSPEND), Cause.NO_CANDIDATE, None, 0, None)
            # No selectable pair, but the present one still qualifies: keep it.
            return done(Action(ActionKind.STAY), Cause.NO_CANDIDATE, current, 0, None)
        return done(Action(ActionKind.STAY), Cause.NO_CANDIDATE, None, 0, None)

    def cost_approved(estimate: SwitchEstimate) -> Optional[Decision]:
        """None means no prompt was needed; otherwise the user's verdict."""
        if estimate.acceptable_cost:
            return None
        return oracle(channel.id, estimate.cost_rate, now)

    if channel.state in (ChannelState.ESTABLISHING, ChannelState.SUSPENDED):
        establishing = channel.state is ChannelState.ESTABLISHING
        if not establishing and channel.last_switch_time is not None:
            if now - channel.last_switch_time < dwell.t_dwell_ms:
                return done(Action(ActionKind.STAY), Cause.CONTEXT_EVENT, None, 0, None)
        # Nothing is running, so only the cost needs approval before going up.
        estimate = estimate_switch(None, best, local, remote, req, delay_table)
        verdict = cost_approved(estimate)
        cause = Cause.ESTABLISH if establishing else Cause.CONTEXT_EVENT
        if verdict is None:
            return done(Action(ActionKind.RESUME, best), cause, best, 0, None, estimate)
        if verdict is Decision.ACCEPT:
            return done(Action(ActionKind.RESUME, best), Cause.COST_PROMPT, best, 0, None, estimate)
        if establishing:
            return done(Action(ActionKind.SUSPEND), Cause.COST_PROMPT, None, 0, None, estimate)
        return done(Action(ActionKind.STAY), Cause.COST_PROMPT, None, 0, None, estimate)

    # ACTIVE from here on.
    if best == current:
        return done(Action(ActionKind.STAY), Cause.CONTEXT_EVENT, current, 0, None)

    stability = channel.stability_count + 1 if best == channel.last_best else 1
    if stability < dwell.k_stable or (
        channel.last_switch_time is not None and now - channel.last_switch_time < dwell.t_dwell_ms
    ):
        return done(Action(ActionKind.STAY), Cause.CONTEXT_EVENT, current, stability, best)

    estimate = estimate_switch(current, best, local, remote, req, delay_table)
    current_qos = throughput_reading(local, remote, current) if outcome.pair_valid(current) else 0.0
    if not estimate.acceptable_qos:
        if current_qos >= req.min_acceptable * req.min_throughput:
            return done(
                Action(ActionKind.STAY), Cause.QOS_GUARD, current, stability, best, estimate, current_qos
            )
        # Staying already violates the contract; fall through to the cost check.
    verdict = cost_approved(estimate)
    if verdict is None:
        return done(
            Action(ActionKind.SWITCH, best), Cause.CONTEXT_EVENT, best, stability, best, estimate, current_qos
        )
    if verdict is Decision.ACCEPT:
        return done(
            Action(ActionKind.SWITCH, best), Cause.COST_PROMPT, best, stability, best, estimate, current_qos
        )
    return done(Action(ActionKind.SUSPEND), Cause.COST_PROMPT, None, stability, best, estimate, current_qos)


_LEGAL = {
    ActionKind.SWITCH: {ChannelState.ACTIVE},
    ActionKind.RESUME: {ChannelState.ESTABLISHING, ChannelState.SUSPENDED},
    ActionKind.SUSPEND: {ChannelState.ESTABLISHING, ChannelState.ACTIVE},
    ActionKind.TERMINATE: {ChannelState.ACTIVE, ChannelState.SUSPENDED},
}


def apply_transition(channel: Channel, action: Action, now: int) -> Channel:
    """Apply an action to the channel state machine; illegal combinations raise."""
    if action.kind is ActionKind.STAY:
        if channel.state is ChannelState.TERMINATED:
            raise IllegalTransition("terminated channel cannot act")
        return channel
    allowed = _LEGAL[action.kind]
    if channel.state not in allowed:
        raise IllegalTransition(f"{action.kind.value} is illegal in state {channel.state.value}")
    if action.kind in (ActionKind.SWITCH, ActionKind.RESUME):
        if action.pair is None:
            raise IllegalTransition(f"{action.kind.value} needs a target pair")
        channel.state = ChannelState.ACTIVE
        channel.local_if, channel.remote_if = action.pair
        channel.last_switch_time = now
        channel.stability_count = 0
        channel.last_best = None
    elif action.kind is ActionKind.SUSPEND:
        channel.state = ChannelState.SUSPENDED
        channel.local_if = channel.remote_if = None
        channel.stability_count = 0
        channel.last_best = None
    else:  # TERMINATE
        channel.state = ChannelState.TERMINATED
        channel.local_if = channel.remote_if = None
    return channel


@dataclass
class ChannelManager:
    """Bundles the per-run configuration so evaluation call sites stay small."""

    catalog: dict[FactorName, FactorSpec]
    delay_table: DelayTable
    dwell: DwellConfig
    oracle: UserDecisionOracle

    def evaluate(
        self,
        channel: Channel,
        now: int,
        local: HostContextView,
        remote: HostContextView,
        local_policies: PolicySet,
        remote_policies: PolicySet,
    ) -> Evaluation:
        return evaluate_event(
            channel,
            now,
            local,
            remote,
            local_policies,
            remote_policies,
            self.catalog,
            self.delay_table,
            self.oracle,
            self.dwell,
        )
