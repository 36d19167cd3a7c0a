"""Mobility management: handover plans under the slice's mobility policy,
tracking areas, and paging of idle devices.

Handover plans are staged exchanges.  Make-before-break configures the new
path first, then executes the radio switch, then retires the old path;
break-before-make swaps the first two stages.  Session identifiers are never
touched, which is what carries session continuity across the move.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..errors import NoSessionError, NotIdleError, PolicyForbidsError
from ..messages import Draft, Endpoint, ProcedureKind, Role, draft
from .common import (
    BlockContext, BlockEvent, HandoverStyle, MobilityPolicy, Tech,
)


class PagingState(str, Enum):
    REACHABLE = "reachable"
    IDLE = "idle"
    PAGING_IN_PROGRESS = "paging_in_progress"


@dataclass
class HandoverPlan:
    device: str
    session: str
    style: HandoverStyle
    node: str
    tech: str
    area: str
    ingress: str
    direct: bool
    stage: str   # "new-path" | "execute" | "release"


@dataclass
class PageAttempt:
    correlation_id: str
    started_tick: int
    candidates: tuple


@dataclass
class MMState:
    tracking_areas: dict = field(default_factory=dict)  # device -> area id
    locations: dict = field(default_factory=dict)       # device -> node id
    paging_state: dict = field(default_factory=dict)    # device -> PagingState
    sessions: dict = field(default_factory=dict)        # device -> session id
    device_modes: dict = field(default_factory=dict)    # device -> "direct"|"via_af"
    handovers: dict = field(default_factory=dict)       # correlation -> HandoverPlan
    pages: dict = field(default_factory=dict)           # device -> PageAttempt


def mm_handover(state: MMState, device: str, target_node: str, target_tech: str,
                target_area: str, target_ingress: str, policy: MobilityPolicy,
                ctx: BlockContext, corr: str):
    """Start a handover plan for a device with an active session."""
    session = state.sessions.get(device)
    if session is None:
        raise NoSessionError(f"device {device} has no active session")
    if Tech(target_tech) not in policy.allowed_techs:
        raise PolicyForbidsError(
            f"slice mobility policy excludes {target_tech} targets")
    plan = HandoverPlan(
        device=device, session=session, style=policy.style, node=target_node,
        tech=target_tech, area=target_area, ingress=target_ingress,
        direct=state.device_modes.get(device, "direct") == "direct",
        stage="new-path" if policy.style is HandoverStyle.MAKE_BEFORE_BREAK
        else "execute")
    state.handovers[corr] = plan
    if plan.stage == "new-path":
        return [_new_path_draft(plan, ctx, corr)]
    return _execute_drafts(plan, ctx, corr)


def _new_path_draft(plan: HandoverPlan, ctx: BlockContext, corr: str) -> Draft:
    return draft(
        ProcedureKind.HANDOVER_PREPARE, ctx.self_endpoint,
        ctx.peer_endpoint(Role.FM), corr,
        {"device": plan.device, "session": plan.session, "phase": "new-path",
         "ingress": plan.ingress, "node": plan.node, "tech": plan.tech})


def _execute_drafts(plan: HandoverPlan, ctx: BlockContext, corr: str) -> list:
    payload = {"device": plan.device, "session": plan.session,
               "phase": "execute", "node": plan.node, "tech": plan.tech,
               "area": plan.area}
    if plan.direct:
        return [draft(ProcedureKind.HANDOVER_EXECUTE, ctx.self_endpoint,
                      Endpoint(Role.UE, plan.device), corr, payload)]
    return [draft(ProcedureKind.HANDOVER_EXECUTE, ctx.self_endpoint,
                  ctx.peer_endpoint(Role.AF), corr, payload)]


def _release_draft(plan: HandoverPlan, ctx: BlockContext, corr: str) -> Draft:
    return draft(
        ProcedureKind.SESSION_RELEASE, ctx.self_endpoint,
        ctx.peer_endpoint(Role.FM), corr,
        {"device": plan.device, "session": plan.session,
         "scope": "handover-old"})


def mm_page(state: MMState, device: str, ctx: BlockContext, corr: str):
    """Page a device in its last tracking area: one page per candidate node."""
    if state.paging_state.get(device) is not PagingState.IDLE:
        raise NotIdleError(f"device {device} is not idle")
    area = state.tracking_areas.get(device, "")
    candidates = ctx.nodes_in_area(area)
    state.paging_state[device] = PagingState.PAGING_IN_PROGRESS
    state.pages[device] = PageAttempt(correlation_id=corr,
                                      started_tick=ctx.tick,
                                      candidates=candidates)
    return [draft(ProcedureKind.PAGE, ctx.self_endpoint,
                  ctx.peer_endpoint(Role.AF), corr,
                  {"device": device, "node": node, "area": area,
                   "reason": "downlink-demand"})
            for node in candidates]


def handle(state: MMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    device = payload.get("device", "")
    corr = msg.correlation_id
    kind = msg.kind

    if kind is ProcedureKind.HANDOVER_PREPARE and msg.source.role in (Role.UE, Role.AF):
        policy = ctx.policy.mobility
        assert policy is not None, "MM instantiated without a mobility policy"
        try:
            drafts = mm_handover(
                state, device, target_node=payload.get("node", ""),
                target_tech=payload.get("tech", ""),
                target_area=payload.get("area", ""),
                target_ingress=payload.get("ingress", ""),
                policy=policy, ctx=ctx, corr=corr)
            events.append(BlockEvent("handover-start", device,
                                     {"style": policy.style.value,
                                      "target": payload.get("node", "")}))
        except (NoSessionError, PolicyForbidsError) as exc:
            events.append(BlockEvent("error", device,
                                     {"error": type(exc).__name__,
                                      "detail": str(exc)}))

    elif kind is ProcedureKind.HANDOVER_PREPARE and msg.source.role is Role.FM:
        plan = state.handovers.get(corr)
        if plan is None or payload.get("phase") != "new-path-ok":
            return state, drafts, events
        if plan.style is HandoverStyle.MAKE_BEFORE_BREAK:
            plan.stage = "execute"
            drafts.extend(_execute_drafts(plan, ctx, corr))
        else:
            # break-before-make: path came last, close out with the release
            plan.stage = "release"
            drafts.append(_release_draft(plan, ctx, corr))
            _complete_handover(state, plan, events, corr)

    elif kind is ProcedureKind.HANDOVER_EXECUTE and payload.get("phase") == "confirm":
        plan = state.handovers.get(corr)
        if plan is None:
            return state, drafts, events
        state.tracking_areas[plan.device] = plan.area
        state.locations[plan.device] = plan.node
        if plan.direct and ctx.has(Role.AF):
            drafts.append(draft(
                ProcedureKind.PATH_RECORD_UPDATE, ctx.self_endpoint,
                ctx.peer_endpoint(Role.AF), corr,
                {"device": plan.device, "node": plan.node, "tech": plan.tech,
                 "event": "handover"}))
        if plan.style is HandoverStyle.MAKE_BEFORE_BREAK:
            plan.stage = "release"
            drafts.append(_release_draft(plan, ctx, corr))
            _complete_handover(state, plan, events, corr)
        else:
            plan.stage = "new-path"
            drafts.append(_new_path_draft(plan, ctx, corr))

    elif kind is ProcedureKind.PAGE:
        try:
            drafts = mm_page(state, device, ctx, corr)
            events.append(BlockEvent("page-start", device,
                                     {"candidates": len(drafts)}))
        except NotIdleError as exc:
            events.append(BlockEvent("error", device,
                                     {"error": type(exc).__name__,
                                      "detail": str(exc)}))

    elif kind is ProcedureKind.LOCATION_UPDATE:
        phase = payload.get("phase", "")
        if phase == "register":
            state.tracking_areas[device] = payload.get("area", "")
            state.locations[device] = payload.get("node", "")
            state.sessions[device] = payload.get("session", "")
            state.paging_state[device] = PagingState.REACHABLE
            state.device_modes[device] = payload.get("mode", "direct")
        elif phase == "idle":
            state.paging_state[device] = PagingState.IDLE
            state.device_modes[device] = (
                "via_af" if msg.source.role is Role.AF else "direct")
        elif phase == "page-response":
            attempt = state.pages.pop(device, None)
            if attempt is not None:
                state.paging_state[device] = PagingState.REACHABLE
                state.locations[device] = payload.get("node", "")
                events.append(BlockEvent("page-complete", device,
                                         {"node": payload.get("node", "")}))
        elif phase == "detached":
            for table in (state.tracking_areas, state.locations,
                          state.paging_state, state.sessions,
                          state.device_modes):
                table.pop(device, None)

    return state, drafts, events


def _complete_handover(state: MMState, plan: HandoverPlan, events: list,
                       corr: str) -> None:
    del state.handovers[corr]
    events.append(BlockEvent("handover-complete", plan.device,
                             {"session": plan.session, "node": plan.node,
                              "style": plan.style.value}))


def tick_hook(state: MMState, ctx: BlockContext):
    """Expire pages that outlived the paging timeout."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    timeout = (ctx.policy.mobility.page_timeout
               if ctx.policy.mobility else 8)
    for device in sorted(state.pages):
        attempt = state.pages[device]
        if ctx.tick - attempt.started_tick >= timeout:
            del state.pages[device]
            state.paging_state[device] = PagingState.IDLE
            events.append(BlockEvent("page-timeout", device,
                                     {"after": ctx.tick - attempt.started_tick}))
    return state, drafts, events
