"""Policy-driven, QoS-aware connectivity management with a deterministic simulator."""

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
    Evaluation,
    Mode,
    SelectionOutcome,
    SwitchEstimate,
    apply_transition,
    decision_mode,
    estimate_switch,
    evaluate_event,
    run_selection,
    select_master_slave,
    select_peer_to_peer,
)
from .context import (
    ContextStore,
    ContextTuple,
    EndToEndQoS,
    HostContextView,
    InterfaceDescriptor,
    InterfaceSnapshot,
    iface_entity,
    link_entity,
)
from .costs import (
    CostMatrix,
    FactorSpec,
    INFINITE,
    MAX_COST,
    NormDirection,
    ShapeTag,
    broadcast_to_matrix,
    compute_cost_matrix,
    default_factor_catalog,
    fallback_cost_vector,
    normalize_factor,
    requirement_satisfied,
    weight_cost,
)
from .policy import (
    ChannelRequest,
    Comparator,
    DefaultItem,
    Direction,
    EndType,
    FactorName,
    Metric,
    Policy,
    PolicySet,
    Predicate,
    PriorityItem,
    QoSRequirement,
    Scope,
    Target,
    TrafficClass,
    UseItem,
    WeightItem,
    matching_value,
    parse_policy_set,
    traverse_policies,
    validate_policy,
)
from .sim import (
    Metrics,
    Scenario,
    SimEvent,
    TraceRecord,
    apply_sim_event,
    load_scenario,
    load_scenario_file,
    run_simulation,
    serialize_metrics,
    serialize_trace,
)

__version__ = "0.1.0"
