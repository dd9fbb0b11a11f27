"""Policy validation, matching value, traverse, and document parsing."""

from __future__ import annotations

import json
import random

import pytest

from conman.errors import ParseError, SchemaError, ValidationError
from conman.policy import (
    ChannelRequest,
    Direction,
    EndType,
    FactorName,
    Policy,
    PolicySet,
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
from oracles import ref_traverse

QOS = QoSRequirement(
    min_throughput=100, max_delay=500, max_cost_rate=1.0, max_disruption=1000, min_acceptable=0.5
)


def make_policy(
    order=0,
    scope=Scope.DEVICE,
    ei=None,
    end_type=EndType.MASTER,
    traffic_class=None,
    direction=None,
    policy_id=None,
):
    return Policy(
        id=policy_id or f"p{order}",
        scope=scope,
        ei=ei or UseItem(Target(index=0)),
        end_type=end_type,
        order=order,
        traffic_class=traffic_class,
        direction=direction,
    )


def make_request(tc=TrafficClass.REAL_TIME, direction=Direction.SEND):
    return ChannelRequest("app", tc, direction, QOS)


# -- validate_policy ----------------------------------------------------------

def test_validate_weight_ok():
    policy = make_policy(ei=WeightItem(((FactorName.CHARGE_RATE, 0.6), (FactorName.RTT_MS, 0.4))))
    assert validate_policy(policy) == []


def test_validate_weight_sum_violation():
    policy = make_policy(ei=WeightItem(((FactorName.CHARGE_RATE, 0.6), (FactorName.RTT_MS, 0.6))))
    violations = validate_policy(policy)
    assert len(violations) == 1
    assert "sum" in violations[0] and "1.2" in violations[0]


def test_validate_weight_within_tolerance():
    policy = make_policy(ei=WeightItem(((FactorName.CHARGE_RATE, 0.5 + 4e-10), (FactorName.RTT_MS, 0.5),)))
    assert validate_policy(policy) == []


def test_validate_priority_duplicate_target():
    ei = PriorityItem(((Target(index=0), 2), (Target(index=0), 1)))
    violations = validate_policy(make_policy(ei=ei))
    assert any("duplicate target" in v for v in violations)


def test_validate_priority_bounds():
    assert any(
        "negative" in v
        for v in validate_policy(make_policy(ei=PriorityItem(((Target(index=0), -1),))))
    )
    assert any(
        "exceeds" in v
        for v in validate_policy(make_policy(ei=PriorityItem(((Target(index=0), 2_000_000),))))
    )


def test_validate_negative_weight_and_empty_entries():
    bad = make_policy(ei=WeightItem(((FactorName.CHARGE_RATE, -0.2), (FactorName.RTT_MS, 1.2))))
    assert any("negative weight" in v for v in validate_policy(bad))
    assert any("no entries" in v for v in validate_policy(make_policy(ei=WeightItem(()))))


# -- matching_value -----------------------------------------------------------

def test_mv_counts_matching_selectors():
    policy = make_policy(traffic_class=TrafficClass.REAL_TIME, direction=Direction.SEND)
    assert matching_value(policy, make_request()) == 2


def test_mv_catch_all_is_zero():
    assert matching_value(make_policy(), make_request()) == 0
    assert matching_value(make_policy(), make_request(TrafficClass.BULK_TRANSFER, Direction.RECEIVE)) == 0


def test_mv_conflicting_traffic_class_is_no_match():
    policy = make_policy(traffic_class=TrafficClass.BULK_TRANSFER)
    assert matching_value(policy, make_request()) is None


def test_mv_direction_rules():
    bidi_policy = make_policy(direction=Direction.BIDIRECTIONAL)
    send_policy = make_policy(direction=Direction.SEND)
    assert matching_value(bidi_policy, make_request(direction=Direction.SEND)) == 1
    assert matching_value(bidi_policy, make_request(direction=Direction.BIDIRECTIONAL)) == 1
    assert matching_value(send_policy, make_request(direction=Direction.SEND)) == 1
    assert matching_value(send_policy, make_request(direction=Direction.RECEIVE)) is None
    assert matching_value(send_policy, make_request(direction=Direction.BIDIRECTIONAL)) is None


# -- traverse_policies --------------------------------------------------------

def test_traverse_single_channel_match():
    pset = PolicySet((make_policy(order=0, scope=Scope.CHANNEL),))
    assert traverse_policies(pset, make_request()).id == "p0"


def test_traverse_scope_outranks_mv():
    channel_weak = make_policy(order=0, scope=Scope.CHANNEL, traffic_class=TrafficClass.REAL_TIME)
    app_strong = make_policy(
        order=1, scope=Scope.APPLICATION, traffic_class=TrafficClass.REAL_TIME, direction=Direction.SEND
    )
    pset = PolicySet((channel_weak, app_strong))
    assert traverse_policies(pset, make_request()).id == "p0"


def test_traverse_no_match_falls_back_to_os():
    pset = PolicySet((make_policy(traffic_class=TrafficClass.BULK_TRANSFER),))
    assert traverse_policies(pset, make_request()) is None


def test_traverse_mv_tie_broken_by_declaration_order():
    a = make_policy(order=0, traffic_class=TrafficClass.REAL_TIME)
    b = make_policy(order=1, traffic_class=TrafficClass.REAL_TIME)
    assert traverse_policies(PolicySet((a, b)), make_request()).id == "p0"
    assert traverse_policies(PolicySet((b, a)), make_request()).id == "p0"


def test_traverse_is_deterministic():
    pset = PolicySet(
        (
            make_policy(order=0, scope=Scope.DEVICE),
            make_policy(order=1, scope=Scope.APPLICATION, traffic_class=TrafficClass.REAL_TIME),
        )
    )
    request = make_request()
    assert traverse_policies(pset, request) == traverse_policies(pset, request)


def _random_policy(rng: random.Random, order: int) -> Policy:
    return make_policy(
        order=order,
        scope=rng.choice(list(Scope)),
        traffic_class=rng.choice([None] + list(TrafficClass)),
        direction=rng.choice([None] + list(Direction)),
        end_type=rng.choice(list(EndType)),
    )


def _random_request(rng: random.Random) -> ChannelRequest:
    return make_request(rng.choice(list(TrafficClass)), rng.choice(list(Direction)))


def test_traverse_scope_dominance_property():
    rng = random.Random(11)
    for _ in range(300):
        request = _random_request(rng)
        channel_match = make_policy(order=0, scope=Scope.CHANNEL)  # catch-all always matches
        extras = tuple(_random_policy(rng, order) for order in range(1, rng.randint(2, 5)))
        lower = tuple(p for p in extras if p.scope is not Scope.CHANNEL)
        before = traverse_policies(PolicySet((channel_match,)), request)
        after = traverse_policies(PolicySet((channel_match,) + lower), request)
        assert before == after


def test_mv_monotonicity_removing_selector_never_raises():
    rng = random.Random(13)
    for _ in range(300):
        policy = _random_policy(rng, 0)
        request = _random_request(rng)
        full = matching_value(policy, request)
        if full is None:
            continue
        for drop in ("traffic_class", "direction"):
            if getattr(policy, drop) is None:
                continue
            reduced = make_policy(
                order=0,
                scope=policy.scope,
                traffic_class=None if drop == "traffic_class" else policy.traffic_class,
                direction=None if drop == "direction" else policy.direction,
            )
            assert matching_value(reduced, request) <= full


def test_traverse_matches_reference_implementation():
    rng = random.Random(99)
    for _ in range(500):
        pset = PolicySet(tuple(_random_policy(rng, k) for k in range(rng.randint(0, 5))))
        request = _random_request(rng)
        assert traverse_policies(pset, request) == ref_traverse(pset.policies, request)


# -- parse_policy_set ---------------------------------------------------------

MINIMAL = {"policies": [{"id": "p1", "scope": "device", "end_type": "master", "default": "wlan"}]}


def test_parse_minimal_document():
    pset = parse_policy_set(json.dumps(MINIMAL).encode())
    assert len(pset) == 1
    policy = pset.policies[0]
    assert policy.order == 0
    assert policy.end_type is EndType.MASTER
    assert policy.ei.target.tech == "WLAN"


def test_parse_orders_follow_array_position():
    doc = {
        "policies": [
            {"id": "a", "scope": "device", "end_type": "master", "use": "index:1"},
            {"id": "b", "scope": "channel", "end_type": "slave", "use": "gprs"},
        ]
    }
    pset = parse_policy_set(json.dumps(doc))
    assert [p.order for p in pset] == [0, 1]
    assert pset.policies[0].ei.target.index == 1


def test_parse_weight_sum_violation_cites_policy_id():
    doc = {
        "policies": [
            {
                "id": "heavy",
                "scope": "device",
                "end_type": "master",
                "weight": [{"factor": "charge_rate", "w": 0.9}],
            }
        ]
    }
    with pytest.raises(ValidationError) as err:
        parse_policy_set(json.dumps(doc))
    assert "heavy" in str(err.value)


def test_parse_unknown_traffic_class_is_schema_error():
    doc = {
        "policies": [
            {
                "id": "p",
                "scope": "device",
                "end_type": "master",
                "traffic_class": "streaming",
                "default": "wlan",
            }
        ]
    }
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps(doc))


def test_parse_unknown_key_is_schema_error():
    doc = {"policies": [{**MINIMAL["policies"][0], "color": "blue"}]}
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps(doc))


def test_parse_requires_exactly_one_evaluation_item():
    base = {"id": "p", "scope": "device", "end_type": "master"}
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps({"policies": [base]}))
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps({"policies": [{**base, "use": "wlan", "default": "gprs"}]}))


def test_parse_malformed_json():
    with pytest.raises(ParseError):
        parse_policy_set(b"{not json")


def test_parse_rc_and_enums():
    doc = {
        "policies": [
            {
                "id": "p",
                "scope": "channel",
                "end_type": "slave",
                "traffic_class": "real_time",
                "direction": "send",
                "rc": [{"metric": "rtt_ms", "cmp": "le", "bound": 100}],
                "priority": [{"target": "index:0", "value": 1}],
            }
        ]
    }
    pset = parse_policy_set(json.dumps(doc))
    policy = pset.policies[0]
    assert policy.rc[0].metric.value == "rtt_ms"
    assert policy.rc[0].holds(80) and not policy.rc[0].holds(150)
    assert policy.traffic_class is TrafficClass.REAL_TIME


def test_parse_bad_priority_value_type():
    doc = {
        "policies": [
            {
                "id": "p",
                "scope": "device",
                "end_type": "master",
                "priority": [{"target": "index:0", "value": 1.5}],
            }
        ]
    }
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps(doc))


def test_parse_bad_index_target():
    doc = {"policies": [{"id": "p", "scope": "device", "end_type": "master", "use": "index:abc"}]}
    with pytest.raises(SchemaError):
        parse_policy_set(json.dumps(doc))
