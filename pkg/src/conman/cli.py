"""Command-line front end: run scenarios, validate inputs, one-shot evaluation.

Exit codes: 0 success, 1 validation failure (or no valid connection in eval),
2 I/O or parse error, 3 internal invariant violation. The CONMAN_LOG
environment variable (off|info|debug) controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .channel import run_selection
from .context import EndToEndQoS, HostContextView, InterfaceDescriptor, InterfaceSnapshot
from .costs import INFINITE, default_factor_catalog
from .errors import ConmanError, ParseError, SchemaError, ValidationError
from .policy import (
    ChannelRequest,
    Direction,
    QoSRequirement,
    TrafficClass,
    parse_policy_document,
    parse_policy_set,
)
from .report import render_figures, text_report
from .sim import load_scenario, run_simulation, serialize_metrics, serialize_trace

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

# Placeholder QoS for one-shot evaluation: selection itself never gates on it.
_EVAL_QOS = QoSRequirement(
    min_throughput=1.0,
    max_delay=1e9,
    max_cost_rate=1e9,
    max_disruption=1e9,
    min_acceptable=1.0,
)


def _setup_logging() -> None:
    level_name = os.environ.get("CONMAN_LOG", "off").lower()
    if level_name == "off":
        logging.disable(logging.CRITICAL)
        return
    levels = {"info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"conman: ignoring unknown CONMAN_LOG value {level_name!r}", file=sys.stderr)
        return
    logging.basicConfig(
        stream=sys.stderr,
        level=levels[level_name],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _cost_to_json(value: float):
    return None if value == INFINITE else value


def cmd_run(args) -> int:
    try:
        raw = _read_bytes(args.scenario)
    except OSError as exc:
        print(f"conman: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        scenario = load_scenario(raw)
    except (ParseError, SchemaError) as exc:
        print(f"conman: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        for violation in exc.violations:
            print(violation, file=sys.stderr)
        return EXIT_VALIDATION

    trace, metrics = run_simulation(scenario)

    try:
        if args.trace:
            Path(args.trace).write_text(serialize_trace(trace), encoding="utf-8")
        if args.metrics:
            Path(args.metrics).write_text(serialize_metrics(metrics), encoding="utf-8")
    except OSError as exc:
        print(f"conman: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO

    figures_dir = args.figures
    if figures_dir is None and args.report and args.trace:
        # Report path renders figures next to the delimited trace output.
        figures_dir = str(Path(args.trace).parent)
    if figures_dir is not None:
        render_figures(trace, metrics, figures_dir)

    if args.report == "text":
        print(text_report(metrics))
    elif args.report == "json":
        print(json.dumps(metrics.to_json_obj(), indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        raw = _read_bytes(args.path)
    except OSError as exc:
        print(f"conman: cannot read file: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.kind == "policy":
            parse_policy_set(raw)
        else:
            load_scenario(raw)
    except (ParseError, SchemaError) as exc:
        print(str(exc))
        return EXIT_IO
    except ValidationError as exc:
        for violation in exc.violations:
            print(violation)
        return EXIT_VALIDATION
    return EXIT_OK


def _parse_request(text: str) -> ChannelRequest:
    fields = {}
    for part in text.split(","):
        part = part.strip()
        if not part or "=" not in part:
            raise SchemaError(f"bad request component {part!r}; expected key=value")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    unknown = set(fields) - {"tc", "dir"}
    if unknown:
        raise SchemaError(f"unknown request keys {sorted(unknown)}; use tc=...,dir=...")
    if "tc" not in fields:
        raise SchemaError("request needs tc=<traffic class>")
    try:
        tc = TrafficClass(fields["tc"])
        direction = Direction(fields.get("dir", "bidirectional"))
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    return ChannelRequest("eval", tc, direction, _EVAL_QOS)


def _load_snapshot_host(raw, position: int) -> HostContextView:
    if not isinstance(raw, dict):
        raise SchemaError(f"host #{position} must be an object")
    unknown = set(raw) - {"id", "as_of", "interfaces", "e2e"}
    if unknown:
        raise SchemaError(f"host #{position}: unknown keys {sorted(unknown)}")
    host_id = raw.get("id")
    if not isinstance(host_id, str) or not host_id:
        raise SchemaError(f"host #{position}: missing string id")
    ifaces_raw = raw.get("interfaces")
    if not isinstance(ifaces_raw, list) or not ifaces_raw:
        raise SchemaError(f"host {host_id!r}: needs a non-empty interfaces list")
    snapshots = []
    for k, item in enumerate(ifaces_raw):
        if not isinstance(item, dict):
            raise SchemaError(f"host {host_id!r}: interface #{k} must be an object")
        known = {
            "index", "tech", "max_speed", "subscribed", "available",
            "signal_strength", "snr", "charge_rate", "power_draw", "current_speed",
        }
        unknown = set(item) - known
        if unknown:
            raise SchemaError(f"host {host_id!r}: interface #{k} unknown keys {sorted(unknown)}")
        for key in ("index", "tech", "max_speed"):
            if key not in item:
                raise SchemaError(f"host {host_id!r}: interface #{k} missing {key!r}")
        descriptor = InterfaceDescriptor(
            host_id=host_id,
            index=int(item["index"]),
            tech_type=str(item["tech"]).upper(),
            max_speed=float(item["max_speed"]),
            subscribed=bool(item.get("subscribed", True)),
        )
        snapshots.append(
            InterfaceSnapshot(
                descriptor=descriptor,
                available=bool(item.get("available", False)),
                signal_strength=float(item.get("signal_strength", -120.0)),
                snr=float(item.get("snr", 0.0)),
                charge_rate=float(item.get("charge_rate", 0.0)),
                power_draw=float(item.get("power_draw", 0.0)),
                current_speed=float(item.get("current_speed", 0.0)),
            )
        )
    snapshots.sort(key=lambda s: s.descriptor.index)
    indexes = [s.descriptor.index for s in snapshots]
    if indexes != list(range(len(indexes))):
        raise ValidationError(f"host {host_id!r}: interface indexes must be contiguous from 0")
    e2e = {}
    for k, item in enumerate(raw.get("e2e", [])):
        if not isinstance(item, dict) or "local" not in item or "remote" not in item:
            raise SchemaError(f"host {host_id!r}: e2e #{k} needs local/remote")
        unknown = set(item) - {"local", "remote", "rtt", "bandwidth_up", "bandwidth_down", "packet_loss_rate", "jitter"}
        if unknown:
            raise SchemaError(f"host {host_id!r}: e2e #{k} unknown keys {sorted(unknown)}")
        key = (int(item["local"]), int(item["remote"]))
        e2e[key] = EndToEndQoS(
            rtt=float(item.get("rtt", 0.0)),
            bandwidth_up=float(item.get("bandwidth_up", 0.0)),
            bandwidth_down=float(item.get("bandwidth_down", 0.0)),
            packet_loss_rate=float(item.get("packet_loss_rate", 0.0)),
            jitter=float(item.get("jitter", 0.0)),
        )
    as_of = int(raw.get("as_of", 0))
    return HostContextView(host_id=host_id, interfaces=tuple(snapshots), e2e=e2e, as_of=as_of)


def _load_snapshot_pair(raw) -> tuple[HostContextView, HostContextView]:
    if not isinstance(raw, dict) or set(raw) != {"hosts"}:
        raise SchemaError('snapshot document needs exactly a "hosts" key')
    hosts = raw["hosts"]
    if not isinstance(hosts, list) or len(hosts) != 2:
        raise SchemaError("snapshot needs exactly 2 hosts")
    return _load_snapshot_host(hosts[0], 0), _load_snapshot_host(hosts[1], 1)


def cmd_eval(args) -> int:
    try:
        snapshot_raw = json.loads(_read_bytes(args.snapshot))
        policies_raw = json.loads(_read_bytes(args.policies))
    except OSError as exc:
        print(f"conman: cannot read input: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"conman: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        try:
            request = _parse_request(args.request)
            local, remote = _load_snapshot_pair(snapshot_raw)
        except (TypeError, ValueError) as exc:  # mistyped field values
            raise SchemaError(str(exc)) from None
        if isinstance(policies_raw, dict) and "policies" in policies_raw:
            shared = parse_policy_document(policies_raw)
            psets = {local.host_id: shared, remote.host_id: shared}
        elif isinstance(policies_raw, dict):
            unknown = set(policies_raw) - {local.host_id, remote.host_id}
            if unknown:
                raise SchemaError(f"policies for unknown hosts {sorted(unknown)}")
            psets = {}
            for view in (local, remote):
                if view.host_id not in policies_raw:
                    raise SchemaError(f"missing policy document for host {view.host_id!r}")
                psets[view.host_id] = parse_policy_document(policies_raw[view.host_id])
        else:
            raise SchemaError("policies document must be an object")
    except (ParseError, SchemaError) as exc:
        print(f"conman: {exc}", file=sys.stderr)
        print("usage hint: --request 'tc=real_time,dir=send'", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        for violation in exc.violations:
            print(violation, file=sys.stderr)
        return EXIT_VALIDATION

    # Single traverse -> cost -> select pass, no hysteresis.
    outcome = run_selection(
        request, local, remote, psets[local.host_id], psets[remote.host_id], default_factor_catalog()
    )
    if outcome.best is None:
        print("no_valid_connection")
        return EXIT_VALIDATION

    result = {
        "mmp": {
            local.host_id: outcome.mmp_local.id if outcome.mmp_local else None,
            remote.host_id: outcome.mmp_remote.id if outcome.mmp_remote else None,
        },
        "mode": outcome.mode.value,
        "costs": {
            local.host_id: [[_cost_to_json(v) for v in row] for row in outcome.c_local.entries],
            remote.host_id: [[_cost_to_json(v) for v in row] for row in outcome.c_remote.entries],
        },
        "pair": list(outcome.best),
        "cost": outcome.pair_cost(outcome.best),
    }
    print(json.dumps(result, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conman",
        description="Policy-driven connectivity management engine and two-host simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and write trace/metrics")
    run_p.add_argument("scenario", help="scenario JSON file")
    run_p.add_argument("--trace", help="write the trace as JSON Lines to this path")
    run_p.add_argument("--metrics", help="write per-channel metrics JSON to this path")
    run_p.add_argument("--report", choices=["text", "json"], help="print a summary to stdout")
    run_p.add_argument(
        "--figures",
        metavar="DIR",
        help="render timeline/cost PNGs into DIR (default: next to --trace when --report is given)",
    )
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validate", help="validate a policy or scenario file")
    val_p.add_argument("path")
    val_p.add_argument("--kind", choices=["policy", "scenario"], required=True)
    val_p.set_defaults(func=cmd_validate)

    eval_p = sub.add_parser("eval", help="one-shot selection from a context snapshot")
    eval_p.add_argument("snapshot", help="JSON file holding both hosts' context views")
    eval_p.add_argument("policies", help="policy document (shared or per-host)")
    eval_p.add_argument("--request", required=True, help='channel request, e.g. "tc=real_time,dir=send"')
    eval_p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConmanError as exc:
        print(f"conman: internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort guard for exit code 3
        print(f"conman: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
