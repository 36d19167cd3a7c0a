"""Trace records, their line serialization, and structural audits.

A run produces one ordered stream of records sharing a single monotone
sequence counter; message records use that counter as their msg_id.  Lines
are pipe-separated with the mutable-width payload/detail column last:

    MSG|seq|tick|kind|source|destination|interface|correlation|hops|mediators|recipients|payload
    EVT|seq|tick|kind|subject|detail

Serialization is canonical (sorted-key JSON for payloads) so equal runs are
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Union

from .errors import SchemaError
from .messages import (
    Destination, Endpoint, InterfacePoint, ProcedureKind, SignalMessage, Topic,
    validate_message,
)


def canonical_json(value: object) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class MessageRecord:
    seq: int
    tick: int
    msg: SignalMessage
    hop_count: int = 1
    mediators: tuple[str, ...] = ()
    recipients: tuple[str, ...] = ()   # non-empty only for fabric deliveries

    def line(self) -> str:
        m = self.msg
        return "|".join([
            "MSG", str(self.seq), str(self.tick), m.kind.value, str(m.source),
            str(m.destination), m.interface.value, m.correlation_id,
            str(self.hop_count), ",".join(self.mediators),
            ",".join(self.recipients), canonical_json(dict(m.payload)),
        ])


@dataclass(frozen=True)
class EventRecord:
    seq: int
    tick: int
    kind: str         # "transition", "error", "flow-delivered", "slice-digest", ...
    subject: str
    detail: dict

    def line(self) -> str:
        return "|".join([
            "EVT", str(self.seq), str(self.tick), self.kind, self.subject,
            canonical_json(self.detail),
        ])


TraceRecord = Union[MessageRecord, EventRecord]


def render_trace(records: Iterable[TraceRecord]) -> str:
    return "".join(r.line() + "\n" for r in records)


def _parse_destination(text: str) -> Destination:
    if text.startswith("topic:"):
        return Topic(text.split(":", 1)[1])
    return Endpoint.parse(text)


def parse_trace(text: str, source: str = "<trace>") -> list[TraceRecord]:
    records: list[TraceRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        tag = raw.split("|", 1)[0]
        where = f"{source}:{lineno}"
        if tag == "MSG":
            parts = raw.split("|", 11)
            if len(parts) != 12:
                raise SchemaError(f"{where}: malformed MSG record")
            (_, seq, tick, kind, src, dst, iface, corr, hops, mediators,
             recipients, payload) = parts
            msg = SignalMessage(
                msg_id=int(seq), tick=int(tick), kind=ProcedureKind(kind),
                source=Endpoint.parse(src), destination=_parse_destination(dst),
                interface=InterfacePoint(iface), correlation_id=corr,
                payload=json.loads(payload))
            records.append(MessageRecord(
                seq=int(seq), tick=int(tick), msg=msg, hop_count=int(hops),
                mediators=tuple(mediators.split(",")) if mediators else (),
                recipients=tuple(recipients.split(",")) if recipients else ()))
        elif tag == "EVT":
            parts = raw.split("|", 5)
            if len(parts) != 6:
                raise SchemaError(f"{where}: malformed EVT record")
            _, seq, tick, kind, subject, detail = parts
            records.append(EventRecord(
                seq=int(seq), tick=int(tick), kind=kind, subject=subject,
                detail=json.loads(detail)))
        else:
            raise SchemaError(f"{where}: unknown record tag {tag!r}")
    return records


def _payload_mentions(payload: object, value: str) -> bool:
    if isinstance(payload, str):
        return payload == value
    if isinstance(payload, dict):
        return any(_payload_mentions(v, value) for v in payload.values())
    if isinstance(payload, (list, tuple)):
        return any(_payload_mentions(v, value) for v in payload)
    return False


def trace_check(records: list[TraceRecord]) -> list[str]:
    """Structural audit of a trace.

    Checks: strict (tick, seq) total order with unique sequence numbers,
    interface-role consistency of every message, and permanent-identity
    hygiene: the alias a device presents on its first attachment must never
    reappear on I1/I2/I3 after that device's first successful authentication.
    A message emitted late in one tick is traced at its delivery tick, so
    sequence numbers are monotone only within the (tick, seq) pair order.
    """
    violations: list[str] = []
    last_key = (-1, -1)
    seen_seqs: set[int] = set()
    first_alias: dict[str, str] = {}
    authenticated: set[str] = set()
    for rec in records:
        key = (rec.tick, rec.seq)
        if key <= last_key:
            violations.append(
                f"record (tick={rec.tick}, seq={rec.seq}) not ordered after "
                f"(tick={last_key[0]}, seq={last_key[1]})")
        last_key = key
        if rec.seq in seen_seqs:
            violations.append(f"duplicate sequence number {rec.seq}")
        seen_seqs.add(rec.seq)
        if isinstance(rec, EventRecord):
            if rec.kind == "auth" and rec.detail.get("ok"):
                authenticated.add(rec.subject)
            continue
        msg = rec.msg
        verdict = validate_message(msg)
        if not verdict:
            violations.extend(f"seq {rec.seq}: {v}" for v in verdict.violations)
        if msg.kind is ProcedureKind.ATTACH_REQUEST and not msg.payload.get("reattach"):
            device = msg.payload.get("device")
            alias = msg.payload.get("alias")
            if isinstance(device, str) and isinstance(alias, str):
                first_alias.setdefault(device, alias)
        if msg.interface in (InterfacePoint.I1, InterfacePoint.I2, InterfacePoint.I3):
            for device in authenticated:
                alias = first_alias.get(device)
                if alias and _payload_mentions(dict(msg.payload), alias):
                    violations.append(
                        f"seq {rec.seq}: permanent identity of {device} on "
                        f"{msg.interface.value} after first authentication")
    return violations
