"""Access function: abstracts last-hop connectivity behind the west-bound
side, keeps path records, answers pages from them, and gates core-plane
requests to reconfigure access nodes.

Uplink device signalling arrives access-specific on I1 and leaves
access-agnostic on I3 with the technology tag preserved as metadata;
downlink messages take the reverse translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..messages import Draft, Endpoint, InterfacePoint, ProcedureKind, Role, draft
from .common import BlockContext, BlockEvent

#: Core roles allowed to reconfigure access nodes through this function.
DEFAULT_AN_CONFIG_RIGHTS = {"CM": frozenset({"an-config"}),
                            "FM": frozenset({"an-config"})}

#: Uplink kinds and the core role their access-agnostic form targets.
_UPLINK_TARGETS = {
    ProcedureKind.ATTACH_REQUEST: Role.CM,
    ProcedureKind.SESSION_ESTABLISH: Role.CM,
    ProcedureKind.SESSION_RELEASE: Role.CM,
    ProcedureKind.HANDOVER_PREPARE: Role.MM,
    ProcedureKind.HANDOVER_EXECUTE: Role.MM,
    ProcedureKind.LOCATION_UPDATE: Role.MM,
}

#: Downlink kinds forwarded to the device on I1.
_DOWNLINK_KINDS = frozenset({
    ProcedureKind.SLICE_REDIRECT,
    ProcedureKind.HANDOVER_EXECUTE,
})


@dataclass(frozen=True)
class PathRecordEntry:
    tick: int
    node: str
    tech: str
    event: str


@dataclass
class AFState:
    access_nodes: dict = field(default_factory=dict)   # node id -> AccessNodeInfo
    path_records: dict = field(default_factory=dict)   # device -> list[PathRecordEntry]
    device_location: dict = field(default_factory=dict)
    cn_access_permissions: dict = field(
        default_factory=lambda: dict(DEFAULT_AN_CONFIG_RIGHTS))


def latest_endpoint(state: AFState, device: str) -> str | None:
    records = state.path_records.get(device)
    return records[-1].node if records else None


def record_path(state: AFState, device: str, node: str, tech: str, event: str,
                tick: int) -> None:
    state.path_records.setdefault(device, []).append(
        PathRecordEntry(tick=tick, node=node, tech=tech, event=event))
    state.device_location[device] = node


def af_handle(state: AFState, msg, ctx: BlockContext):
    """Translate between access-specific and access-agnostic signalling and
    maintain the path-record view used for paging."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    device = payload.get("device", "")

    if msg.interface is InterfacePoint.I1:
        # uplink: record attachment/transition events, then translate to I3
        if msg.kind is ProcedureKind.ATTACH_REQUEST:
            record_path(state, device, payload.get("node", ""),
                        payload.get("tech", ""), "attach-attempt", ctx.tick)
        elif msg.kind is ProcedureKind.HANDOVER_EXECUTE and \
                payload.get("phase") == "confirm":
            if device not in state.path_records:
                events.append(BlockEvent("error", device,
                                         {"error": "UnknownDevice",
                                          "detail": "transition for unrecorded device"}))
                return state, drafts, events
            record_path(state, device, payload.get("node", ""),
                        payload.get("tech", ""), "handover", ctx.tick)
        target_role = _UPLINK_TARGETS.get(msg.kind)
        if target_role is None:
            events.append(BlockEvent("error", device,
                                     {"error": "NoInterfaceError",
                                      "detail": f"no uplink mapping for {msg.kind.value}"}))
            return state, drafts, events
        if (msg.kind is ProcedureKind.ATTACH_REQUEST
                and int(payload.get("method", 2)) == 1
                and not payload.get("reattach") and ctx.global_cm):
            target = Endpoint(Role.CM, ctx.global_cm)
        else:
            target = ctx.peer_endpoint(target_role)
        drafts.append(draft(msg.kind, ctx.self_endpoint, target,
                            msg.correlation_id, payload))
        return state, drafts, events

    # I3: signalling from the core side
    if msg.kind is ProcedureKind.PAGE:
        node = payload.get("node", "")
        if state.device_location.get(device) == node:
            drafts.append(draft(
                ProcedureKind.LOCATION_UPDATE, ctx.self_endpoint, msg.source,
                msg.correlation_id,
                {"device": device, "phase": "page-response", "node": node}))
            events.append(BlockEvent("page-hit", device, {"node": node}))
        return state, drafts, events

    if msg.kind is ProcedureKind.PATH_RECORD_UPDATE:
        record_path(state, device, payload.get("node", ""),
                    payload.get("tech", ""), payload.get("event", "update"),
                    ctx.tick)
        return state, drafts, events

    if msg.kind is ProcedureKind.FLOW_CONFIGURE:
        # access-node configuration request from the core plane
        rights = state.cn_access_permissions.get(msg.source.role.value, frozenset())
        ok = "an-config" in rights
        if not ok:
            events.append(BlockEvent("error", msg.source.role.value,
                                     {"error": "PermissionDenied",
                                      "detail": "no AN configuration rights"}))
        else:
            events.append(BlockEvent("an-config", payload.get("node", ""),
                                     {"by": msg.source.role.value}))
        drafts.append(draft(
            ProcedureKind.FLOW_NOTIFY, ctx.self_endpoint, msg.source,
            msg.correlation_id,
            {"phase": "an-config", "node": payload.get("node", ""), "ok": ok},
            interface=msg.interface))
        return state, drafts, events

    if msg.kind in _DOWNLINK_KINDS:
        if msg.kind is ProcedureKind.HANDOVER_EXECUTE and device and \
                device not in state.path_records:
            events.append(BlockEvent("error", device,
                                     {"error": "UnknownDevice",
                                      "detail": "transition for unrecorded device"}))
            return state, drafts, events
        drafts.append(draft(msg.kind, ctx.self_endpoint,
                            Endpoint(Role.UE, device), msg.correlation_id,
                            payload))
        return state, drafts, events

    return state, drafts, events


handle = af_handle
