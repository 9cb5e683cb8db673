"""Outcome measures computed from a run trace, plus CSV round-tripping.

Every number here reconciles exactly against the trace: a sent data packet
either reaches its destination or has exactly one terminal drop event, and
`reconcile` asserts that bookkeeping for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .scenario import Scenario
from .trace import Trace, TraceEvent

# Trace events that terminate a data packet short of delivery.
DROP_EVENTS = ("MaliciousDrop", "IsolationDrop", "QueueDrop", "NoRoute",
               "TtlExpired", "EnergyExhausted", "LinkLoss", "EndFlight",
               "EndBuffered")

CONTROL_TX_KINDS = frozenset({"rreq", "rrep", "agent", "report", "dump", "table"})


@dataclass
class Metrics:
    seed: int
    pdr_overall: float
    pdr_per_flow: dict[int, float]
    sent_per_flow: dict[int, int]
    delivered_per_flow: dict[int, int]
    detection_latency: dict[int, float | None]
    false_positive_quarantines: int
    control_overhead_ratio: float
    agent_traffic_bytes: int
    energy_remaining: dict[int, float]


def majority_quarantine_time(events: Iterable[TraceEvent], subject: int,
                             node_count: int) -> float | None:
    """Earliest time at which at least half the nodes hold `subject` infected."""
    need = math.ceil(node_count * 0.5)
    observers: set[int] = set()
    for e in events:
        if e.ev == "Quarantine" and e.get("subject") == subject:
            observers.add(e.node)
            if len(observers) >= need:
                return e.t
    return None


def compute_metrics(trace: Trace, sc: Scenario, seed: int | None = None) -> Metrics:
    sent: dict[int, int] = {i: 0 for i in range(len(sc.flows))}
    sent_ids: dict[tuple[int, int, int], int] = {}
    delivered: dict[int, int] = {i: 0 for i in range(len(sc.flows))}
    tx_total = 0
    tx_control = 0
    agent_bytes = 0
    energy: dict[int, float] = {}
    for e in trace:
        if e.ev == "Send":
            flow = e.get("flow")
            if flow >= 0:
                sent[flow] += 1
                sent_ids[(e.node, e.get("dst"), e.get("seq"))] = flow
        elif e.ev == "Deliver":
            flow = sent_ids.get((e.get("src"), e.get("dst"), e.get("seq")))
            if flow is not None:
                delivered[flow] += 1
        elif e.ev == "Tx":
            tx_total += 1
            if e.get("kind") in CONTROL_TX_KINDS:
                tx_control += 1
            if e.get("kind") == "agent":
                agent_bytes += e.get("size")
        elif e.ev == "Energy":
            energy[e.node] = e.get("e")

    pdr_per_flow = {i: (delivered[i] / sent[i]) if sent[i] else 0.0
                    for i in sent}
    total_sent = sum(sent.values())
    total_delivered = sum(delivered.values())
    pdr_overall = (total_delivered / total_sent) if total_sent else 1.0

    profiles = {a.node for a in sc.attackers}
    detection: dict[int, float | None] = {}
    for a in sc.attackers:
        t = majority_quarantine_time(trace, a.node, sc.node_count)
        detection[a.node] = None if t is None else t - a.start
    false_positives = sum(1 for e in trace
                          if e.ev == "Quarantine" and e.get("subject") not in profiles)

    return Metrics(
        seed=sc.master_seed if seed is None else seed,
        pdr_overall=pdr_overall,
        pdr_per_flow=pdr_per_flow,
        sent_per_flow=dict(sent),
        delivered_per_flow=dict(delivered),
        detection_latency=detection,
        false_positive_quarantines=false_positives,
        control_overhead_ratio=(tx_control / tx_total) if tx_total else 0.0,
        agent_traffic_bytes=agent_bytes,
        energy_remaining=energy,
    )


def reconcile(trace: Trace) -> dict[tuple[int, int, int], str]:
    """Map every sent data packet to its single terminal outcome.

    Raises AssertionError when a packet has no terminal event or more than
    one; returns {(src, dst, seq): outcome}.
    """
    outcomes: dict[tuple[int, int, int], str] = {}
    sent: set[tuple[int, int, int]] = set()
    for e in trace:
        if e.ev == "Send":
            sent.add((e.node, e.get("dst"), e.get("seq")))
        elif e.ev == "Deliver" or e.ev in DROP_EVENTS:
            if e.ev in ("EnergyExhausted", "LinkLoss", "TtlExpired") \
                    and e.get("kind") != "data":
                continue
            key = (e.get("src"), e.get("dst"), e.get("seq"))
            if key not in sent:
                continue  # control or defense packet identity overlap
            assert key not in outcomes, \
                f"packet {key} terminated twice: {outcomes[key]} then {e.ev}"
            outcomes[key] = e.ev
    missing = sent - set(outcomes)
    assert not missing, f"packets without terminal event: {sorted(missing)[:5]}"
    return outcomes


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def _columns(metrics: Metrics) -> list[str]:
    cols = ["seed", "pdr_overall"]
    cols += [f"pdr_flow{i}" for i in sorted(metrics.pdr_per_flow)]
    cols += [f"detect_{n}" for n in sorted(metrics.detection_latency)]
    cols += ["false_positive_quarantines", "control_overhead_ratio",
             "agent_traffic_bytes"]
    cols += [f"energy_{n}" for n in sorted(metrics.energy_remaining)]
    return cols


def _row_values(m: Metrics) -> list[str]:
    out = [str(m.seed), repr(m.pdr_overall)]
    out += [repr(m.pdr_per_flow[i]) for i in sorted(m.pdr_per_flow)]
    for n in sorted(m.detection_latency):
        v = m.detection_latency[n]
        out.append("" if v is None else repr(v))
    out += [str(m.false_positive_quarantines), repr(m.control_overhead_ratio),
            str(m.agent_traffic_bytes)]
    out += [repr(m.energy_remaining[n]) for n in sorted(m.energy_remaining)]
    return out


def metrics_csv(per_seed: list[Metrics]) -> str:
    """Render one row per seed plus an aggregate (mean) row."""
    if not per_seed:
        return "seed\n"
    cols = _columns(per_seed[0])
    lines = [",".join(cols)]
    for m in per_seed:
        lines.append(",".join(_row_values(m)))
    agg = ["aggregate"]
    rows = [_row_values(m) for m in per_seed]
    for i in range(1, len(cols)):
        values = [float(r[i]) for r in rows if r[i] != ""]
        agg.append(repr(sum(values) / len(values)) if values else "")
    lines.append(",".join(agg))
    return "\n".join(lines) + "\n"


def parse_metrics_csv(text: str) -> list[dict[str, float | None]]:
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row: dict[str, float | None] = {}
        for col, cell in zip(header, cells):
            if cell == "":
                row[col] = None
            elif col == "seed" and cell == "aggregate":
                row[col] = cell
            else:
                row[col] = float(cell)
        rows.append(row)
    return rows


def summary_text(per_seed: list[Metrics]) -> str:
    """Human-readable mean/min/max per headline metric."""
    if not per_seed:
        return "no runs\n"
    lines = [f"runs: {len(per_seed)}"]

    def stat(name: str, values: list[float]) -> None:
        if not values:
            lines.append(f"{name}: n/a")
            return
        lines.append(f"{name}: mean={sum(values) / len(values):.6g} "
                     f"min={min(values):.6g} max={max(values):.6g}")

    stat("pdr_overall", [m.pdr_overall for m in per_seed])
    stat("control_overhead_ratio", [m.control_overhead_ratio for m in per_seed])
    stat("agent_traffic_bytes", [float(m.agent_traffic_bytes) for m in per_seed])
    stat("false_positive_quarantines",
         [float(m.false_positive_quarantines) for m in per_seed])
    for node in sorted(per_seed[0].detection_latency):
        vals = [m.detection_latency[node] for m in per_seed
                if m.detection_latency.get(node) is not None]
        detected = len(vals)
        lines.append(f"attacker {node}: detected on {detected}/{len(per_seed)} seeds")
        if vals:
            lines.append(f"  detection_latency_s: mean={sum(vals) / len(vals):.6g} "
                         f"min={min(vals):.6g} max={max(vals):.6g}")
    return "\n".join(lines) + "\n"
