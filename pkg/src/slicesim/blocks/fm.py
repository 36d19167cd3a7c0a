"""Flow management: per-slice path strategies over its topology view,
capacity reservation, southbound rule application with rollback, and
forwarding-plane telemetry ingestion.

Two path strategies are supported.  ``shortest`` picks the minimum total
latency simple path, ties broken by the lexicographically smallest node-id
sequence.  ``load_distribution`` considers every simple path within
``(1 + stretch)`` times the shortest latency and picks the one minimising
the maximum post-installation link utilisation, same tie rule, where a
link's post-installation utilisation is::

    max(observed_load, (reserved + demand) / capacity)

Installed rules are removed lazily: a released path keeps its rules for the
path's total latency plus one tick, so units already in flight drain instead
of being dropped on the floor.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from ..errors import CapacityError, NoPathError
from ..messages import Draft, Endpoint, ProcedureKind, Role, draft
from .common import BlockContext, BlockEvent, PathStrategy


@dataclass
class LinkState:
    capacity: int
    latency: int
    reserved: int = 0
    observed: float = 0.0


def link_key(a: str, b: str) -> tuple:
    return (a, b) if a <= b else (b, a)


@dataclass
class TopologyView:
    nodes: dict = field(default_factory=dict)   # node id -> kind
    links: dict = field(default_factory=dict)   # link_key -> LinkState

    def neighbors(self, node: str) -> list:
        out = []
        for (a, b) in self.links:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def link(self, a: str, b: str) -> LinkState:
        return self.links[link_key(a, b)]

    def path_latency(self, nodes: tuple) -> int:
        return sum(self.link(a, b).latency for a, b in zip(nodes, nodes[1:]))


@dataclass(frozen=True)
class ForwardingPath:
    flow: str
    nodes: tuple
    qos: str
    demand: int

    def pairs(self) -> tuple:
        """(node, next-hop) rules realising this path; the last node delivers."""
        hops = list(zip(self.nodes, list(self.nodes[1:]) + ["deliver"]))
        return tuple(hops)


@dataclass(frozen=True)
class QosPolicy:
    demand: int
    strategy: PathStrategy | None = None   # None: use the slice strategy


DEFAULT_QOS_POLICIES = {
    "default": QosPolicy(demand=1),
    "critical": QosPolicy(demand=2),
}


@dataclass
class SessionBinding:
    device: str
    anchor: str
    ingress: str
    flows: list = field(default_factory=list)


@dataclass
class PendingApply:
    flow: str
    path: ForwardingPath
    outstanding: set
    purpose: str               # "flow" | "handover" | "reanchor"
    reply_to: Endpoint | None
    reply_corr: str
    session: str
    old_path: ForwardingPath | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class HandoverJob:
    session: str
    remaining: int
    reply_to: Endpoint
    new_ingress: str


@dataclass
class RetireEntry:
    due_tick: int
    flow: str
    pairs: tuple


@dataclass
class FMState:
    view: TopologyView
    strategy: PathStrategy = PathStrategy.SHORTEST_PATH
    stretch: float = 0.5
    qos_policies: dict = field(default_factory=lambda: dict(DEFAULT_QOS_POLICIES))
    path_table: dict = field(default_factory=dict)      # flow -> ForwardingPath
    sessions: dict = field(default_factory=dict)        # session -> SessionBinding
    flow_sessions: dict = field(default_factory=dict)   # flow -> session
    pending: dict = field(default_factory=dict)         # (corr, flow) -> PendingApply
    handover_jobs: dict = field(default_factory=dict)   # corr -> HandoverJob
    swapped_out: dict = field(default_factory=dict)     # flow -> old ForwardingPath
    retiring: list = field(default_factory=list)        # RetireEntry, due order


# -- path search ---------------------------------------------------------------

def shortest_path(view: TopologyView, src: str, dst: str) -> tuple:
    """Minimum-latency simple path as (latency, node tuple); ties by node
    sequence.  Link latencies are >= 1, so equal-cost walks are simple."""
    if src not in view.nodes or dst not in view.nodes:
        raise NoPathError(f"unknown endpoint {src!r} or {dst!r}")
    best: dict = {}
    heap = [(0, (src,))]
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if best.get(node, (1 << 60, ())) < (dist, path):
            continue
        if node == dst:
            return dist, path
        for nbr in view.neighbors(node):
            cand = (dist + view.link(node, nbr).latency, path + (nbr,))
            if cand < best.get(nbr, (1 << 60, ())):
                best[nbr] = cand
                heapq.heappush(heap, cand)
    raise NoPathError(f"no path {src} -> {dst}")


def simple_paths_within(view: TopologyView, src: str, dst: str,
                        budget: float) -> list:
    """All simple paths with total latency within the budget."""
    results: list = []

    def walk(node: str, path: tuple, dist: int) -> None:
        if node == dst:
            results.append((dist, path))
            return
        for nbr in view.neighbors(node):
            if nbr in path:
                continue
            step = dist + view.link(node, nbr).latency
            if step <= budget:
                walk(nbr, path + (nbr,), step)

    walk(src, (src,), 0)
    return results


def post_install_utilisation(view: TopologyView, nodes: tuple, demand: int) -> float:
    worst = 0.0
    for a, b in zip(nodes, nodes[1:]):
        link = view.link(a, b)
        worst = max(worst, link.observed,
                    (link.reserved + demand) / link.capacity)
    return worst


def choose_path(view: TopologyView, src: str, dst: str, demand: int,
                strategy: PathStrategy, stretch: float) -> tuple:
    if strategy is PathStrategy.SHORTEST_PATH:
        return shortest_path(view, src, dst)[1], None
    base, _ = shortest_path(view, src, dst)
    budget = (1 + stretch) * base
    candidates = simple_paths_within(view, src, dst, budget)
    ranked = sorted(
        (post_install_utilisation(view, path, demand), path)
        for _, path in candidates)
    utilisation, path = ranked[0]
    return path, utilisation


# -- operations ------------------------------------------------------------------

def fm_define_path(state: FMState, flow: str, ingress: str, egress: str,
                   qos: str) -> ForwardingPath:
    """Pick a path under the active strategy and reserve its capacity."""
    policy = state.qos_policies.get(qos, QosPolicy(demand=1))
    strategy = policy.strategy or state.strategy
    nodes, _ = choose_path(state.view, ingress, egress, policy.demand,
                           strategy, state.stretch)
    for a, b in zip(nodes, nodes[1:]):
        link = state.view.link(a, b)
        if link.reserved + policy.demand > link.capacity:
            raise CapacityError(
                f"link {a}~{b} cannot reserve {policy.demand} more units")
    path = ForwardingPath(flow=flow, nodes=nodes, qos=qos, demand=policy.demand)
    _reserve(state, path, +1)
    state.path_table[flow] = path
    return path


def _reserve(state: FMState, path: ForwardingPath, sign: int) -> None:
    for a, b in zip(path.nodes, path.nodes[1:]):
        state.view.link(a, b).reserved += sign * path.demand


def fm_apply(state: FMState, path: ForwardingPath, ctx: BlockContext,
             corr: str, purpose: str, reply_to: Endpoint | None,
             session: str, old_path: ForwardingPath | None = None,
             extra: dict | None = None) -> list:
    """Emit one install command per on-path node through the southbound
    adaptor and track the acknowledgement set."""
    state.pending[(corr, path.flow)] = PendingApply(
        flow=path.flow, path=path, outstanding=set(path.nodes),
        purpose=purpose, reply_to=reply_to, reply_corr=corr, session=session,
        old_path=old_path, extra=dict(extra or {}))
    return [
        draft(ProcedureKind.FLOW_CONFIGURE, ctx.self_endpoint,
              _dplane(ctx, node), corr,
              {"flow": path.flow, "node": node, "action": "install",
               "next": nxt})
        for node, nxt in path.pairs()
    ]


def _dplane(ctx: BlockContext, node: str) -> Endpoint:
    return Endpoint(Role.D_PLANE, f"{ctx.slice_id}:{node}")


def _retire_pairs(state: FMState, flow: str, pairs: tuple, tick: int,
                  drain_latency: int) -> None:
    state.retiring.append(RetireEntry(
        due_tick=tick + drain_latency + 1, flow=flow, pairs=tuple(pairs)))


def fm_release_path(state: FMState, flow: str, tick: int,
                    keep: ForwardingPath | None = None) -> None:
    """Release a flow's path: free the reservation now and schedule rule
    removal after the drain window.  Rules shared with `keep` survive."""
    path = state.swapped_out.pop(flow, None) if keep else state.path_table.pop(flow, None)
    if path is None:
        return
    _reserve(state, path, -1)
    keep_pairs = set(keep.pairs()) if keep else set()
    doomed = tuple(p for p in path.pairs() if p not in keep_pairs)
    if doomed:
        _retire_pairs(state, flow, doomed, tick, state.view.path_latency(path.nodes))


# -- message handling --------------------------------------------------------------

def handle(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    corr = msg.correlation_id
    kind = msg.kind

    if kind is ProcedureKind.SESSION_ESTABLISH:
        phase = payload.get("phase", "flow")
        if phase == "register":
            session = payload["session"]
            state.sessions[session] = SessionBinding(
                device=payload.get("device", ""), anchor=payload["anchor"],
                ingress=payload["ingress"])
            drafts.append(draft(
                ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint, msg.source,
                corr, {"session": session, "phase": "register-ok",
                       "anchor": payload["anchor"]}))
        elif phase == "flow":
            drafts, events = _start_flow(state, msg, ctx)
        elif phase == "reanchor":
            drafts, events = _start_reanchor(state, msg, ctx)

    elif kind is ProcedureKind.HANDOVER_PREPARE and payload.get("phase") == "new-path":
        drafts, events = _start_handover_paths(state, msg, ctx)

    elif kind is ProcedureKind.SESSION_RELEASE:
        drafts, events = _handle_release(state, msg, ctx)

    elif kind is ProcedureKind.FLOW_NOTIFY:
        drafts, events = _handle_notify(state, msg, ctx)

    return state, drafts, events


def _start_flow(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    session = payload["session"]
    binding = state.sessions.get(session)
    flow = payload["flow"]
    try:
        path = fm_define_path(state, flow, payload["ingress"],
                              binding.anchor if binding else payload.get("anchor", ""),
                              payload.get("qos", "default"))
    except (NoPathError, CapacityError) as exc:
        events.append(BlockEvent("error", flow,
                                 {"error": type(exc).__name__, "detail": str(exc)}))
        drafts.append(draft(
            ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint, msg.source,
            msg.correlation_id,
            {"session": session, "phase": "flow-err", "flow": flow,
             "ok": False}))
        return drafts, events
    state.flow_sessions[flow] = session
    events.append(BlockEvent("path-defined", flow,
                             {"nodes": list(path.nodes), "qos": path.qos}))
    drafts.extend(fm_apply(state, path, ctx, msg.correlation_id, "flow",
                           msg.source, session))
    return drafts, events


def _start_reanchor(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    session = payload["session"]
    flow = payload["flow"]
    old = state.path_table.get(flow)
    if old is None:
        return drafts, events
    new_anchor = payload["anchor"]
    try:
        path = fm_define_path(state, flow, old.nodes[0], new_anchor, old.qos)
    except (NoPathError, CapacityError) as exc:
        events.append(BlockEvent("error", flow,
                                 {"error": type(exc).__name__, "detail": str(exc)}))
        return drafts, events
    state.swapped_out[flow] = old
    events.append(BlockEvent("path-defined", flow,
                             {"nodes": list(path.nodes), "qos": path.qos,
                              "reanchor": new_anchor}))
    drafts.extend(fm_apply(state, path, ctx, msg.correlation_id, "reanchor",
                           msg.source, session, old_path=old,
                           extra={"anchor": new_anchor}))
    return drafts, events


def _start_handover_paths(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    session = payload["session"]
    binding = state.sessions.get(session)
    if binding is None:
        events.append(BlockEvent("error", session,
                                 {"error": "NoSessionError",
                                  "detail": "handover for unknown session"}))
        return drafts, events
    new_ingress = payload["ingress"]
    flows = [f for f in binding.flows if f in state.path_table]
    if not flows:
        binding.ingress = new_ingress
        drafts.append(draft(
            ProcedureKind.HANDOVER_PREPARE, ctx.self_endpoint, msg.source,
            msg.correlation_id,
            {"session": session, "phase": "new-path-ok", "ok": True}))
        return drafts, events
    state.handover_jobs[msg.correlation_id] = HandoverJob(
        session=session, remaining=len(flows), reply_to=msg.source,
        new_ingress=new_ingress)
    for flow in flows:
        old = state.path_table[flow]
        try:
            path = fm_define_path(state, flow, new_ingress, binding.anchor, old.qos)
        except (NoPathError, CapacityError) as exc:
            events.append(BlockEvent("error", flow,
                                     {"error": type(exc).__name__,
                                      "detail": str(exc)}))
            continue
        state.swapped_out[flow] = old
        drafts.extend(fm_apply(state, path, ctx, msg.correlation_id,
                               "handover", None, session, old_path=old))
    return drafts, events


def _handle_release(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    session = payload.get("session", "")
    scope = payload.get("scope", "flow")
    if scope == "flow":
        flow = payload.get("flow", "")
        fm_release_path(state, flow, ctx.tick)
        state.flow_sessions.pop(flow, None)
        binding = state.sessions.get(session)
        if binding and flow in binding.flows:
            binding.flows.remove(flow)
        events.append(BlockEvent("flow-released", flow, {"session": session}))
    elif scope == "handover-old":
        for flow in sorted(state.swapped_out):
            if state.flow_sessions.get(flow) != session:
                continue
            current = state.path_table.get(flow)
            fm_release_path(state, flow, ctx.tick, keep=current)
            events.append(BlockEvent("old-path-released", flow,
                                     {"session": session}))
    elif scope == "session":
        binding = state.sessions.pop(session, None)
        if binding:
            for flow in list(binding.flows):
                fm_release_path(state, flow, ctx.tick)
                state.flow_sessions.pop(flow, None)
                events.append(BlockEvent("flow-released", flow,
                                         {"session": session}))
    return drafts, events


def _handle_notify(state: FMState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    payload = dict(msg.payload)
    phase = payload.get("phase", "")

    if phase == "config-ack":
        key = (msg.correlation_id, payload.get("flow", ""))
        job = state.pending.get(key)
        if job is None:
            return drafts, events
        if not payload.get("ok", False):
            drafts.extend(_rollback(state, key, job, ctx))
            events.append(BlockEvent("error", job.flow,
                                     {"error": "AdaptorError",
                                      "detail": f"node {payload.get('node')} rejected"}))
            return drafts, events
        job.outstanding.discard(payload.get("node", ""))
        if not job.outstanding:
            del state.pending[key]
            drafts.extend(_commit(state, job, ctx))
    elif phase == "load":
        link = payload.get("link", "")
        if "~" in link:
            a, b = link.split("~", 1)
            if link_key(a, b) in state.view.links:
                state.view.link(a, b).observed = float(payload.get("load", 0.0))
    elif phase == "latency":
        if ctx.has(Role.CGHF):
            flow = payload.get("flow", "")
            for value in payload.get("values", []):
                drafts.append(draft(
                    ProcedureKind.CONTEXT_PUBLISH, ctx.self_endpoint,
                    ctx.peer_endpoint(Role.CGHF), msg.correlation_id,
                    {"metric": "flow-latency", "subject": flow,
                     "value": value, "source": "dplane"}))
    return drafts, events


def _commit(state: FMState, job: PendingApply, ctx: BlockContext) -> list:
    drafts: list[Draft] = []
    if job.purpose == "flow":
        binding = state.sessions.get(job.session)
        if binding is not None and job.flow not in binding.flows:
            binding.flows.append(job.flow)
        drafts.append(draft(
            ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint, job.reply_to,
            job.reply_corr,
            {"session": job.session, "phase": "flow-ok", "flow": job.flow,
             "ok": True}))
    elif job.purpose == "reanchor":
        binding = state.sessions.get(job.session)
        if binding is not None:
            binding.anchor = job.extra.get("anchor", binding.anchor)
        # retire what the old path used exclusively
        fm_release_path(state, job.flow, ctx.tick, keep=job.path)
        drafts.append(draft(
            ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint, job.reply_to,
            job.reply_corr,
            {"session": job.session, "phase": "reanchor-ok",
             "flow": job.flow, "anchor": job.extra.get("anchor"), "ok": True}))
    elif job.purpose == "handover":
        ho = state.handover_jobs.get(job.reply_corr)
        if ho is not None:
            ho.remaining -= 1
            if ho.remaining == 0:
                del state.handover_jobs[job.reply_corr]
                binding = state.sessions.get(ho.session)
                if binding is not None:
                    binding.ingress = ho.new_ingress
                drafts.append(draft(
                    ProcedureKind.HANDOVER_PREPARE, ctx.self_endpoint,
                    ho.reply_to, job.reply_corr,
                    {"session": ho.session, "phase": "new-path-ok", "ok": True}))
    return drafts


def _rollback(state: FMState, key: tuple, job: PendingApply,
              ctx: BlockContext) -> list:
    """Undo a partially applied path: free its reservation, restore the
    swapped-out path if any, and remove rules already installed."""
    del state.pending[key]
    _reserve(state, job.path, -1)
    restored = state.swapped_out.pop(job.flow, None)
    if restored is not None:
        state.path_table[job.flow] = restored
    else:
        state.path_table.pop(job.flow, None)
    acked = [p for p in job.path.pairs() if p[0] not in job.outstanding]
    keep = set(restored.pairs()) if restored else set()
    drafts = [
        draft(ProcedureKind.FLOW_CONFIGURE, ctx.self_endpoint,
              _dplane(ctx, node), job.reply_corr,
              {"flow": job.flow, "node": node, "action": "remove", "next": nxt})
        for node, nxt in acked if (node, nxt) not in keep
    ]
    if job.reply_to is not None and job.purpose == "flow":
        drafts.append(draft(
            ProcedureKind.SESSION_ESTABLISH, ctx.self_endpoint, job.reply_to,
            job.reply_corr,
            {"session": job.session, "phase": "flow-err", "flow": job.flow,
             "ok": False}))
    return drafts


def tick_hook(state: FMState, ctx: BlockContext):
    """Send removal commands for retired rules whose drain window elapsed."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    due = [r for r in state.retiring if r.due_tick <= ctx.tick]
    state.retiring = [r for r in state.retiring if r.due_tick > ctx.tick]
    for entry in due:
        for node, nxt in entry.pairs:
            drafts.append(draft(
                ProcedureKind.FLOW_CONFIGURE, ctx.self_endpoint,
                _dplane(ctx, node), f"{entry.flow}:retire",
                {"flow": entry.flow, "node": node, "action": "remove",
                 "next": nxt}))
    return state, drafts, events
