"""Connectivity management: the per-device convergent state machine, address
allocation, data-plane function selection and both slice-selection methods.

A global-part instance authenticates first and hands the device to the
chosen slice's local instance (method 1); a slice-local instance either
accepts the device or redirects it towards the slice its subscription names
(method 2).  Redirected devices re-attach carrying their security-context
token, so no second credential exchange happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..errors import NoDPlaneFunctionError, NoEligibleSliceError
from ..messages import (
    Draft, Endpoint, InterfacePoint, ProcedureKind, Role, draft,
)
from .common import BlockContext, BlockEvent


class CMRole(str, Enum):
    GLOBAL = "global"
    SLICE_LOCAL = "slice_local"


class ConvergentState(str, Enum):
    DETACHED = "detached"
    AUTHENTICATING = "authenticating"
    ATTACHED = "attached"
    SESSION_ACTIVE = "session_active"


#: Declared edges of the convergent state machine (including teardown).
ALLOWED_TRANSITIONS = frozenset({
    (ConvergentState.DETACHED, ConvergentState.AUTHENTICATING),
    (ConvergentState.AUTHENTICATING, ConvergentState.ATTACHED),
    (ConvergentState.ATTACHED, ConvergentState.SESSION_ACTIVE),
    (ConvergentState.AUTHENTICATING, ConvergentState.DETACHED),
    (ConvergentState.ATTACHED, ConvergentState.DETACHED),
    (ConvergentState.SESSION_ACTIVE, ConvergentState.ATTACHED),
    (ConvergentState.SESSION_ACTIVE, ConvergentState.DETACHED),
})


@dataclass(frozen=True)
class Subscription:
    allowed: tuple
    default: str | None = None


@dataclass
class SessionRecord:
    session_id: str
    device: str
    anchor: str
    addresses: tuple
    flows: list = field(default_factory=list)


@dataclass
class PendingAttach:
    device: str
    alias: str
    accesses: tuple
    node: str
    area: str
    tech: str
    method: int
    direct: bool
    reattach: bool = False


@dataclass(frozen=True)
class SliceChoice:
    accept_here: bool
    target: str | None = None


@dataclass
class CMState:
    role: CMRole = CMRole.SLICE_LOCAL
    device_table: dict = field(default_factory=dict)    # device -> ConvergentState
    sessions: dict = field(default_factory=dict)        # session id -> SessionRecord
    device_sessions: dict = field(default_factory=dict) # device -> session id
    slice_bindings: dict = field(default_factory=dict)  # device -> slice id
    addresses: dict = field(default_factory=dict)       # device -> tuple of ids
    subscription_view: dict = field(default_factory=dict)
    device_modes: dict = field(default_factory=dict)    # device -> "direct"|"via_af"
    device_nodes: dict = field(default_factory=dict)    # device -> access node
    pending_attach: dict = field(default_factory=dict)  # correlation -> PendingAttach
    session_counter: int = 0
    reanchor_counter: int = 0


def _transition(state: CMState, device: str, to: ConvergentState,
                events: list, slice_id: str) -> None:
    frm = state.device_table.get(device, ConvergentState.DETACHED)
    if frm is to:
        return
    assert (frm, to) in ALLOWED_TRANSITIONS, f"illegal edge {frm.value}->{to.value}"
    state.device_table[device] = to
    events.append(BlockEvent("transition", device,
                             {"from": frm.value, "to": to.value, "slice": slice_id}))


def cm_select_slice_global(state: CMState, device: str) -> str:
    """Method 1: pick the slice the subscription designates.  The default is
    preferred when it is among the allowed slices; otherwise the smallest
    allowed slice id wins (documented tie rule)."""
    sub = state.subscription_view.get(device)
    if sub is None or not sub.allowed:
        raise NoEligibleSliceError(f"subscription of {device} lists no slice")
    if sub.default and sub.default in sub.allowed:
        return sub.default
    return sorted(sub.allowed)[0]


def cm_select_slice_local(state: CMState, device: str, this_slice: str) -> SliceChoice:
    """Method 2: accept the device here if its subscription names this slice,
    else suggest the slice it should attach to."""
    sub = state.subscription_view.get(device)
    if sub is None or not sub.allowed:
        raise NoEligibleSliceError(f"subscription of {device} lists no slice")
    if this_slice in sub.allowed:
        return SliceChoice(accept_here=True)
    if sub.default and sub.default in sub.allowed:
        return SliceChoice(accept_here=False, target=sub.default)
    return SliceChoice(accept_here=False, target=sorted(sub.allowed)[0])


def select_anchor(ctx: BlockContext, node: str, exclude: str | None = None) -> str:
    """Data-plane function selection: the anchor candidate with the lowest
    simulated latency from the device's access ingress, ties by node id."""
    info = ctx.access_nodes.get(node)
    candidates = [a for a in ctx.anchors if a != exclude]
    if not candidates or info is None:
        raise NoDPlaneFunctionError(
            f"slice {ctx.slice_id} exposes no anchor candidate for node {node}")
    ranked = sorted(candidates,
                    key=lambda a: (ctx.ingress_latency.get((info.ingress, a), 1 << 30), a))
    return ranked[0]


def cm_attach(state: CMState, pending: PendingAttach, auth_ok: bool,
              ctx: BlockContext, corr: str):
    """Complete an attachment after authentication.

    Success allocates one network address per requested access network,
    selects the data-plane anchor, creates the device's session and registers
    it with flow management.  Failure detaches the device and allocates
    nothing.  The register exchange rides the attach correlation."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    device = pending.device
    if not auth_ok:
        _transition(state, device, ConvergentState.DETACHED, events, ctx.slice_id)
        events.append(BlockEvent("attach-denied", device, {"slice": ctx.slice_id}))
        return drafts, events

    anchor = select_anchor(ctx, pending.node)
    accesses = pending.accesses or (pending.tech,)
    addrs = tuple(f"ip-{ctx.slice_id}-{device}-{a}" for a in accesses)
    state.addresses[device] = addrs
    state.session_counter += 1
    session_id = f"s-{ctx.slice_id}-{state.session_counter}"
    record = SessionRecord(session_id=session_id, device=device, anchor=anchor,
                           addresses=addrs)
    state.sessions[session_id] = record
    state.device_sessions[device] = session_id
    state.slice_bindings[device] = ctx.slice_id
    state.device_modes[device] = "direct" if pending.direct else "via_af"
    state.device_nodes[device] = pending.node
    _transition(state, device, ConvergentState.ATTACHED, events, ctx.slice_id)
    events.append(BlockEvent("anchor-selected", device,
                             {"anchor": anchor, "session": session_id}))
    info = ctx.access_nodes[pending.node]
    drafts.append(draft(
        ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint,
        ctx.peer_endpoint(Role.FM), corr,
        {"device": device, "session": session_id, "phase": "register",
         "anchor": anchor, "ingress": info.ingress,
         "addresses": list(addrs)}))
    return drafts, events


def _forward_to_device(state: CMState, ctx: BlockContext, device: str,
                       kind: ProcedureKind, corr: str, payload: dict) -> Draft:
    """Downlink towards a device, via its access function when mediated."""
    if state.device_modes.get(device, "direct") == "via_af" and ctx.has(Role.AF):
        return draft(kind, ctx.self_endpoint, ctx.peer_endpoint(Role.AF), corr, payload)
    return draft(kind, ctx.self_endpoint, Endpoint(Role.UE, device), corr, payload)


def handle(state: CMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    kind = msg.kind
    payload = dict(msg.payload)
    corr = msg.correlation_id

    if kind is ProcedureKind.ATTACH_REQUEST:
        device = payload["device"]
        direct = msg.interface is InterfacePoint.I2
        pending = PendingAttach(
            device=device, alias=payload.get("alias", ""),
            accesses=tuple(payload.get("accesses") or ()),
            node=payload.get("node", ""), area=payload.get("area", ""),
            tech=payload.get("tech", ""), method=int(payload.get("method", 2)),
            direct=direct, reattach=bool(payload.get("reattach")))
        _transition(state, device, ConvergentState.AUTHENTICATING, events, ctx.slice_id)
        if pending.reattach:
            # Redirected re-attachment: the carried context token stands in
            # for a fresh credential exchange.
            if not payload.get("token"):
                _transition(state, device, ConvergentState.DETACHED, events, ctx.slice_id)
                events.append(BlockEvent("attach-denied", device,
                                         {"reason": "missing-context-token"}))
            else:
                more, evs = _continue_local_attach(state, pending, ctx, corr)
                drafts.extend(more)
                events.extend(evs)
        else:
            state.pending_attach[corr] = pending
            drafts.append(draft(
                ProcedureKind.AUTH_CHALLENGE, ctx.self_endpoint,
                ctx.peer_endpoint(Role.SAM), corr,
                {"device": device, "alias": pending.alias,
                 "proof": payload.get("proof", ""),
                 "scheme": ctx.policy.auth_scheme.value}))

    elif kind is ProcedureKind.AUTH_RESPONSE:
        pending = state.pending_attach.pop(corr, None)
        if pending is None:
            events.append(BlockEvent("error", payload.get("device", "?"),
                                     {"error": "StrayAuthResponse"}))
            return state, drafts, events
        if not payload.get("ok"):
            more, evs = cm_attach(state, pending, auth_ok=False, ctx=ctx, corr=corr)
            drafts.extend(more)
            events.extend(evs)
        elif state.role is CMRole.GLOBAL:
            try:
                target = cm_select_slice_global(state, pending.device)
            except NoEligibleSliceError as exc:
                _transition(state, pending.device, ConvergentState.DETACHED,
                            events, ctx.slice_id)
                events.append(BlockEvent("error", pending.device,
                                         {"error": type(exc).__name__,
                                          "detail": str(exc)}))
            else:
                state.slice_bindings[pending.device] = target
                _transition(state, pending.device, ConvergentState.ATTACHED,
                            events, ctx.slice_id)
                events.append(BlockEvent("slice-selected", pending.device,
                                         {"slice": target, "method": 1}))
                local_cm = ctx.slice_directory[target]
                drafts.append(draft(
                    ProcedureKind.SLICE_SELECT, ctx.self_endpoint,
                    Endpoint(Role.CM, local_cm), corr,
                    {"device": pending.device, "slice": target,
                     "pseudonym": payload.get("pseudonym"),
                     "ordinal": payload.get("ordinal"),
                     "token": payload.get("token"),
                     "accesses": list(pending.accesses), "node": pending.node,
                     "area": pending.area, "tech": pending.tech,
                     "mode": "direct" if pending.direct else "via_af"}))
        else:
            more, evs = _continue_local_attach(state, pending, ctx, corr)
            drafts.extend(more)
            events.extend(evs)

    elif kind is ProcedureKind.SLICE_SELECT:
        # Hand-off from the global part: the device arrives pre-authenticated.
        pending = PendingAttach(
            device=payload["device"], alias=payload.get("pseudonym", ""),
            accesses=tuple(payload.get("accesses") or ()),
            node=payload.get("node", ""), area=payload.get("area", ""),
            tech=payload.get("tech", ""), method=1,
            direct=payload.get("mode", "direct") == "direct")
        _transition(state, pending.device, ConvergentState.AUTHENTICATING,
                    events, ctx.slice_id)
        more, evs = _attach_here(state, pending, ctx, corr)
        drafts.extend(more)
        events.extend(evs)

    elif kind is ProcedureKind.SESSION_ESTABLISH:
        drafts, events = _handle_session_establish(state, msg, ctx)

    elif kind is ProcedureKind.SESSION_RELEASE:
        drafts, events = _handle_session_release(state, msg, ctx)

    elif kind is ProcedureKind.CONTEXT_NOTIFY:
        drafts, events = _handle_context_notify(state, msg, ctx)

    return state, drafts, events


def _continue_local_attach(state: CMState, pending: PendingAttach,
                           ctx: BlockContext, corr: str):
    """Post-authentication slice check for method 2 (and re-attachment)."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    try:
        choice = cm_select_slice_local(state, pending.device, ctx.slice_id)
    except NoEligibleSliceError as exc:
        _transition(state, pending.device, ConvergentState.DETACHED, events, ctx.slice_id)
        events.append(BlockEvent("error", pending.device,
                                 {"error": type(exc).__name__, "detail": str(exc)}))
        return drafts, events
    if choice.accept_here:
        more, evs = _attach_here(state, pending, ctx, corr)
        return more, evs + events
    events.append(BlockEvent("slice-redirect", pending.device,
                             {"target": choice.target, "from": ctx.slice_id}))
    state.device_modes[pending.device] = "direct" if pending.direct else "via_af"
    drafts.append(_forward_to_device(
        state, ctx, pending.device, ProcedureKind.SLICE_REDIRECT, corr,
        {"device": pending.device, "target": choice.target}))
    _transition(state, pending.device, ConvergentState.DETACHED, events, ctx.slice_id)
    return drafts, events


def _attach_here(state: CMState, pending: PendingAttach, ctx: BlockContext,
                 corr: str):
    events: list[BlockEvent] = []
    try:
        return cm_attach(state, pending, auth_ok=True, ctx=ctx, corr=corr)
    except NoDPlaneFunctionError as exc:
        _transition(state, pending.device, ConvergentState.DETACHED, events, ctx.slice_id)
        events.append(BlockEvent("error", pending.device,
                                 {"error": type(exc).__name__, "detail": str(exc)}))
        return [], events


def _handle_session_establish(state: CMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    phase = payload.get("phase", "flow")
    device = payload.get("device", "")

    if msg.source.role in (Role.UE, Role.AF):
        # flow request from the device
        current = state.device_table.get(device, ConvergentState.DETACHED)
        if current not in (ConvergentState.ATTACHED, ConvergentState.SESSION_ACTIVE):
            events.append(BlockEvent("error", device,
                                     {"error": "IllegalEventError",
                                      "detail": "traffic for unattached device"}))
            return drafts, events
        session_id = state.device_sessions[device]
        record = state.sessions[session_id]
        flow = payload.get("flow") or f"{device}-f{len(record.flows) + 1}"
        record.flows.append(flow)
        node = payload.get("node") or state.device_nodes.get(device, "")
        info = ctx.access_nodes[node]
        drafts.append(draft(
            ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint,
            ctx.peer_endpoint(Role.FM), msg.correlation_id,
            {"device": device, "session": session_id, "phase": "flow",
             "flow": flow, "rate": payload.get("rate", 1),
             "duration": payload.get("duration", 1),
             "qos": payload.get("qos", "default"),
             "ingress": info.ingress, "anchor": record.anchor}))
        return drafts, events

    if msg.source.role is Role.FM:
        session_id = payload.get("session", "")
        record = state.sessions.get(session_id)
        if record is None:
            return drafts, events
        if phase == "register-ok":
            _transition(state, record.device, ConvergentState.SESSION_ACTIVE,
                        events, ctx.slice_id)
            events.append(BlockEvent("attach-complete", record.device,
                                     {"slice": ctx.slice_id,
                                      "session": session_id}))
            if ctx.has(Role.MM):
                node = state.device_nodes.get(record.device, "")
                info = ctx.access_nodes.get(node)
                drafts.append(draft(
                    ProcedureKind.LOCATION_UPDATE, ctx.self_endpoint,
                    ctx.peer_endpoint(Role.MM), msg.correlation_id,
                    {"device": record.device, "phase": "register",
                     "node": node, "area": info.area if info else "",
                     "session": session_id,
                     "mode": state.device_modes.get(record.device, "direct")}))
            if state.device_modes.get(record.device) == "direct" and ctx.has(Role.AF):
                node = state.device_nodes.get(record.device, "")
                info = ctx.access_nodes.get(node)
                drafts.append(draft(
                    ProcedureKind.PATH_RECORD_UPDATE, ctx.self_endpoint,
                    ctx.peer_endpoint(Role.AF), msg.correlation_id,
                    {"device": record.device, "node": node,
                     "tech": info.tech.value if info else "",
                     "event": "attach"}))
        elif phase == "flow-ok":
            events.append(BlockEvent("flow-ready", record.device,
                                     {"flow": payload.get("flow"),
                                      "session": session_id}))
        elif phase == "flow-err":
            events.append(BlockEvent("error", record.device,
                                     {"error": "FlowSetupFailed",
                                      "flow": payload.get("flow")}))
        elif phase == "reanchor-ok":
            record.anchor = payload.get("anchor", record.anchor)
            events.append(BlockEvent("reanchor-complete", record.device,
                                     {"anchor": record.anchor,
                                      "session": session_id}))
    return drafts, events


def _handle_session_release(state: CMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    device = payload.get("device", "")
    scope = payload.get("scope", "flow")
    session_id = state.device_sessions.get(device)
    if session_id is None:
        events.append(BlockEvent("error", device,
                                 {"error": "IllegalEventError",
                                  "detail": "release for unknown session"}))
        return drafts, events
    if scope == "flow":
        drafts.append(draft(
            ProcedureKind.SESSION_RELEASE, ctx.self_endpoint,
            ctx.peer_endpoint(Role.FM), msg.correlation_id,
            {"device": device, "session": session_id, "scope": "flow",
             "flow": payload.get("flow")}))
        return drafts, events
    # detach
    drafts.append(draft(
        ProcedureKind.SESSION_RELEASE, ctx.self_endpoint,
        ctx.peer_endpoint(Role.FM), msg.correlation_id,
        {"device": device, "session": session_id, "scope": "session"}))
    if ctx.has(Role.MM):
        drafts.append(draft(
            ProcedureKind.LOCATION_UPDATE, ctx.self_endpoint,
            ctx.peer_endpoint(Role.MM), msg.correlation_id,
            {"device": device, "phase": "detached"}))
    state.sessions.pop(session_id, None)
    state.device_sessions.pop(device, None)
    state.slice_bindings.pop(device, None)
    state.addresses.pop(device, None)
    _transition(state, device, ConvergentState.DETACHED, events, ctx.slice_id)
    events.append(BlockEvent("detach", device, {"slice": ctx.slice_id}))
    return drafts, events


def _handle_context_notify(state: CMState, msg, ctx: BlockContext):
    """Consume a latency context by reselecting the data-plane anchor."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    if payload.get("statement") != "latency_above_normal":
        return drafts, events
    flow = payload.get("subject", "")
    record = next((r for r in state.sessions.values() if flow in r.flows), None)
    if record is None:
        return drafts, events
    node = state.device_nodes.get(record.device, "")
    try:
        new_anchor = select_anchor(ctx, node, exclude=record.anchor)
    except NoDPlaneFunctionError:
        events.append(BlockEvent("reselect-impossible", record.device,
                                 {"flow": flow, "anchor": record.anchor}))
        return drafts, events
    state.reanchor_counter += 1
    corr = f"{record.device}:reanchor:{state.reanchor_counter}"
    events.append(BlockEvent("reselect", record.device,
                             {"flow": flow, "from": record.anchor,
                              "to": new_anchor}))
    drafts.append(draft(
        ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint,
        ctx.peer_endpoint(Role.FM), corr,
        {"device": record.device, "session": record.session_id,
         "phase": "reanchor", "flow": flow, "anchor": new_anchor}))
    return drafts, events
