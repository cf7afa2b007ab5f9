"""Report documents, table rendering and latency exports."""
from __future__ import annotations

import csv
import io
from typing import Any, Optional

from . import __version__
from .catalog import RGBD_BITS_PER_PIXEL, Direction, builtin_catalog, catalog_by_id, frame_size
from .engine import TRACE_VERSION, EventTrace, FrameOutcome, Metrics, Scenario
from .link import Verdict, budget_verdict, builtin_profiles, table1_rows, table2_rows

TESTBED_FRAME_BITS = frame_size(424, 240, RGBD_BITS_PER_PIXEL)


def tables() -> dict[str, list[dict[str, Any]]]:
    return {"table1": table1_rows(), "table2": table2_rows(TESTBED_FRAME_BITS)}


def render_tables() -> str:
    t1 = table1_rows()
    t2 = table2_rows(TESTBED_FRAME_BITS)
    lines = ["Measured network performance",
             f"{'Configuration':<20}{'Uplink':>12}{'Downlink':>12}{'Avg RTT':>10}"]
    for row in t1:
        lines.append(f"{row['configuration']:<20}{row['uplink_mbps']:>7} Mb/s"
                     f"{row['downlink_mbps']:>7} Mb/s{row['rtt_ms']:>7} ms")
    lines += ["", f"Transmission time, {TESTBED_FRAME_BITS} bit frame",
              f"{'Configuration':<20}{'Frame tx':>10}{'Access':>10}{'Residual':>10}  Verdict"]
    for row in t2:
        lines.append(f"{row['configuration']:<20}{row['frame_tx_ms']:>7} ms{row['access_latency_ms']:>7} ms"
                     f"{row['remaining_budget_ms']:>7} ms  {row['verdict']}")
    return "\n".join(lines) + "\n"


def render_catalog() -> str:
    lines = [f"{'id':<17}{'kind':<15}{'direction':<10}{'rate':>14}{'frame bits':>14}  rank"]
    for s in builtin_catalog():
        lines.append(f"{s.id:<17}{s.kind.value:<15}{s.direction.value:<10}{s.rate.format():>14}"
                     f"{float(s.frame_bits):>14.0f}  {s.priority}")
    return "\n".join(lines) + "\n"


def stream_verdicts(scenario: Scenario, metrics: Metrics) -> dict[str, dict[str, Any]]:
    """Budget verdict per uplink control stream, judged on its p95 latency."""
    verdicts = {}
    for stream in scenario.traffic_streams():
        if stream.direction is not Direction.UPLINK:
            continue
        m = metrics.per_stream[stream.id]
        if m.latency is not None:
            verdict = budget_verdict(m.latency.p95, 0, scenario.budget)
            p95: Optional[float] = round(float(m.latency.p95), 6)
        elif m.generated:
            verdict, p95 = Verdict.INFEASIBLE, None
        else:
            verdict, p95 = None, None
        verdicts[stream.id] = {"p95_ms": p95, "verdict": None if verdict is None else verdict.value}
    return verdicts


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    """Explicit scenario document; builtin streams and links are named."""
    catalog = catalog_by_id()
    profiles = {p.name: p for p in builtin_profiles()}
    streams = [s.id if catalog.get(s.id) == s else s.to_spec_json() for s in scenario.streams]
    link = scenario.link.name if profiles.get(scenario.link.name) == scenario.link else scenario.link.to_json()
    rtt = scenario.rtt_model
    rtt_doc: dict[str, Any] = {"mode": rtt.mode.value}
    if rtt.mean != scenario.link.rtt_mean:
        rtt_doc["mean_ms"] = float(rtt.mean)
    if rtt.mode.value == "lognormal":
        rtt_doc.update(sigma=rtt.sigma, minimum_ms=float(rtt.minimum))
    return {
        "streams": streams,
        "link": link,
        "rtt_model": rtt_doc,
        "qos": scenario.qos.to_json(),
        "edge_processing_ms": scenario.edge_processing.to_json(),
        "budget": {"lower_ms": float(scenario.budget.lower), "upper_ms": float(scenario.budget.upper)},
        "failsafe": scenario.failsafe.to_json(),
        "duration_s": float(scenario.duration),
        "seed": scenario.seed,
        "link_events": [{"time_ms": float(t), "event": e.value} for t, e in scenario.link_events],
    }


def build_report(scenario: Scenario, metrics: Metrics, scenario_doc: Optional[dict[str, Any]] = None) -> dict[str, Any]:
    metrics.check_conservation()
    return {
        "tool": "limbnet",
        "tool_version": __version__,
        "trace_version": TRACE_VERSION,
        "scenario": scenario_doc if scenario_doc is not None else scenario_to_dict(scenario),
        "metrics": metrics.to_json(),
        "verdicts": stream_verdicts(scenario, metrics),
        "tables": tables(),
    }


def latency_csv(trace: EventTrace) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["stream_id", "seq", "t_generated_ms", "control_latency_ms", "queueing_ms",
                     "transmission_ms", "propagation_ms", "processing_ms", "downlink_ms"])
    for rec in trace.frames:
        if rec.outcome is not FrameOutcome.DELIVERED:
            continue
        parts = rec.components()
        writer.writerow([rec.stream_id, rec.seq, f"{float(rec.t_generated):.6f}",
                         f"{float(rec.control_latency):.6f}",
                         *(f"{float(parts[k]):.6f}" for k in
                           ("queueing", "transmission", "propagation", "processing", "downlink"))])
    return out.getvalue()
