"""Metrics as a pure fold over a trace.

Every figure in a metrics report is recomputable from the serialized trace
alone, so regenerating the report from a trace file reproduces it exactly.
Correlation ids follow ``<origin>:<family>:<n>``, which is where procedure
families come from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .messages import WBI_MEMBERS
from .trace import EventRecord, MessageRecord


def _family(correlation_id: str) -> str:
    parts = correlation_id.split(":")
    return parts[1] if len(parts) >= 2 else correlation_id


@dataclass
class MetricsReport:
    message_counts: dict = field(default_factory=dict)   # (family, iface) -> n
    fabric_hops_total: int = 0
    fabric_hops_per_slice: dict = field(default_factory=dict)
    procedure_runs: dict = field(default_factory=dict)   # family -> runs
    procedure_ticks: dict = field(default_factory=dict)  # family -> total latency
    flows: dict = field(default_factory=dict)            # flow -> summary dict
    digests: dict = field(default_factory=dict)          # slice -> digest


def compute_metrics(records) -> MetricsReport:
    report = MetricsReport()
    spans: dict = {}
    for rec in records:
        if isinstance(rec, MessageRecord):
            family = _family(rec.msg.correlation_id)
            key = (family, rec.msg.interface.value)
            report.message_counts[key] = report.message_counts.get(key, 0) + 1
            if rec.msg.interface in WBI_MEMBERS:
                # west-bound composite: I1/I2/I3 folded for reporting
                wbi = (family, "WBI")
                report.message_counts[wbi] = report.message_counts.get(wbi, 0) + 1
            first, last = spans.get(rec.msg.correlation_id, (rec.tick, rec.tick))
            spans[rec.msg.correlation_id] = (min(first, rec.tick),
                                             max(last, rec.tick))
            if rec.recipients:
                report.fabric_hops_total += rec.hop_count
                scope = rec.recipients[0].split(".")[1] if "." in rec.recipients[0] else "?"
                report.fabric_hops_per_slice[scope] = \
                    report.fabric_hops_per_slice.get(scope, 0) + rec.hop_count
        elif isinstance(rec, EventRecord):
            if rec.kind == "flow-summary":
                report.flows[rec.subject] = {
                    "sent": rec.detail.get("sent", 0),
                    "delivered": rec.detail.get("delivered", 0),
                    "lost": rec.detail.get("lost", 0),
                    "in_flight": rec.detail.get("in_flight", 0)}
            elif rec.kind == "slice-digest":
                report.digests[rec.subject] = rec.detail.get("digest", "")
    for corr, (first, last) in spans.items():
        family = _family(corr)
        report.procedure_runs[family] = report.procedure_runs.get(family, 0) + 1
        report.procedure_ticks[family] = \
            report.procedure_ticks.get(family, 0) + (last - first)
    return report


def render_metrics(report: MetricsReport) -> str:
    """Stable key=value rendering; keys sorted, one figure per line."""
    lines = []
    for (family, iface), count in report.message_counts.items():
        lines.append(f"msg.{family}.{iface} = {count}")
    lines.append(f"hops.total = {report.fabric_hops_total}")
    for scope, hops in report.fabric_hops_per_slice.items():
        lines.append(f"hops.slice.{scope} = {hops}")
    for family, runs in report.procedure_runs.items():
        lines.append(f"procedure.{family}.runs = {runs}")
        lines.append(f"procedure.{family}.ticks = {report.procedure_ticks[family]}")
    for flow, summary in report.flows.items():
        for figure in ("sent", "delivered", "lost", "in_flight"):
            lines.append(f"flow.{flow}.{figure} = {summary[figure]}")
    for scope, digest in report.digests.items():
        lines.append(f"digest.{scope} = {digest}")
    return "\n".join(sorted(lines)) + "\n"
