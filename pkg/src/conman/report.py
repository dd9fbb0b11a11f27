"""Human-readable run summaries and figure rendering.

The text report condenses per-channel metrics to one line each; the figure
renderer draws a channel state timeline and the active-pair cost over time
from the trace and writes both as PNG files.
"""

from __future__ import annotations

from pathlib import Path

from .channel import ActionKind, ChannelState
from .sim import Metrics, TraceRecord

_STATE_LEVEL = {
    ChannelState.TERMINATED: 0,
    ChannelState.SUSPENDED: 1,
    ChannelState.ESTABLISHING: 2,
    ChannelState.ACTIVE: 3,
}

_ACTION_STATE = {
    ActionKind.SWITCH: ChannelState.ACTIVE,
    ActionKind.RESUME: ChannelState.ACTIVE,
    ActionKind.SUSPEND: ChannelState.SUSPENDED,
    ActionKind.TERMINATE: ChannelState.TERMINATED,
}


def text_report(metrics: Metrics) -> str:
    lines = []
    for cid, m in metrics.channels.items():
        cost = "n/a" if m.mean_active_cost is None else f"{m.mean_active_cost:.4f}"
        lines.append(
            f"channel {cid}: switches={m.switches} suspends={m.suspends} "
            f"suspended_ms={m.suspended_ms} active_ms={m.active_ms} "
            f"qos_violation_ms={m.qos_violation_ms} mean_active_cost={cost}"
        )
    total_switches = sum(m.switches for m in metrics.channels.values())
    lines.append(f"total: {len(metrics.channels)} channel(s), {total_switches} switch(es)")
    return "\n".join(lines)


def _state_series(records: list[TraceRecord], channel_id: str):
    times, levels = [], []
    state = ChannelState.ESTABLISHING
    for rec in records:
        if rec.channel != channel_id:
            continue
        state = _ACTION_STATE.get(rec.action, state)
        times.append(rec.time)
        levels.append(_STATE_LEVEL[state])
    return times, levels


def render_figures(records: list[TraceRecord], metrics: Metrics, outdir) -> list[Path]:
    """Write timeline.png and cost.png under outdir; returns the created paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    channel_ids = list(metrics.channels) or sorted({r.channel for r in records})
    created = []

    fig, ax = plt.subplots(figsize=(9, 3 + 0.5 * len(channel_ids)))
    for k, cid in enumerate(channel_ids):
        times, levels = _state_series(records, cid)
        if not times:
            continue
        offset = k * 4.0
        ax.step(times, [lv + offset for lv in levels], where="post", label=cid)
        switch_times = [r.time for r in records if r.channel == cid and r.action is ActionKind.SWITCH]
        ax.plot(switch_times, [_STATE_LEVEL[ChannelState.ACTIVE] + offset] * len(switch_times), "rv")
    ax.set_xlabel("time (ms)")
    ax.set_yticks(
        [lv + k * 4.0 for k in range(len(channel_ids)) for lv in range(4)],
        [s.value for _ in channel_ids for s in (
            ChannelState.TERMINATED, ChannelState.SUSPENDED, ChannelState.ESTABLISHING, ChannelState.ACTIVE,
        )],
        fontsize=7,
    )
    ax.set_title("channel state timeline (markers: switches)")
    if channel_ids:
        ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    timeline_path = outdir / "timeline.png"
    fig.savefig(timeline_path, dpi=150)
    plt.close(fig)
    created.append(timeline_path)

    fig, ax = plt.subplots(figsize=(9, 4))
    for cid in channel_ids:
        times = [r.time for r in records if r.channel == cid and r.cost is not None]
        costs = [r.cost for r in records if r.channel == cid and r.cost is not None]
        if times:
            ax.step(times, costs, where="post", label=cid)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("cost of active pair")
    ax.set_title("active-pair cost over time")
    if channel_ids:
        ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    cost_path = outdir / "cost.png"
    fig.savefig(cost_path, dpi=150)
    plt.close(fig)
    created.append(cost_path)
    return created
