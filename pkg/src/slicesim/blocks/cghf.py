"""Context generation and handling: windowed sample ingestion, analysis
models, and topic publication.

A model watches one metric.  The first `window` samples of a subject lock
its baseline; afterwards the model fires when the mean over the window
exceeds ``factor * baseline``.  Firing is edge-triggered per subject, so a
sustained condition yields exactly one assertion until it clears.  Context
consumption and any consequent action happen in subscriber blocks, never
here: this block only ever emits notifications.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..messages import Draft, ProcedureKind, Role, Topic, draft
from .common import BlockContext, BlockEvent

DEFAULT_WINDOW = 16
DEFAULT_FACTOR = 1.5


@dataclass(frozen=True)
class Sample:
    tick: int
    value: float
    source: str
    external: bool = False


@dataclass(frozen=True)
class ContextModelRule:
    topic: str
    metric: str
    statement: str
    factor: float = DEFAULT_FACTOR
    window: int = DEFAULT_WINDOW
    min_samples: int = 1


@dataclass(frozen=True)
class ContextAssertion:
    topic: str
    subject: str
    statement: str
    evidence: tuple      # ((tick, value), ...) most recent contributing samples
    tick: int


@dataclass
class CGHFState:
    models: tuple = ()
    subscriptions: dict = field(default_factory=dict)   # topic -> tuple of block ids
    buffer: dict = field(default_factory=dict)          # (metric, subject) -> [Sample]
    baselines: dict = field(default_factory=dict)       # (topic, subject) -> float
    warmup: dict = field(default_factory=dict)          # (topic, subject) -> [values]
    armed: dict = field(default_factory=dict)           # (topic, subject) -> bool
    published: list = field(default_factory=list)
    assertion_counter: int = 0


def _window_ticks(state: CGHFState, metric: str) -> int:
    windows = [m.window for m in state.models if m.metric == metric]
    return max(windows) if windows else DEFAULT_WINDOW


def cghf_ingest(state: CGHFState, metric: str, subject: str, value: float,
                source: str, tick: int, external: bool = False) -> CGHFState:
    """Append a sample to the windowed buffer, evicting expired samples."""
    key = (metric, subject)
    window = _window_ticks(state, metric)
    samples = state.buffer.setdefault(key, [])
    samples.append(Sample(tick=tick, value=value, source=source,
                          external=external))
    state.buffer[key] = [s for s in samples if s.tick > tick - window]
    for model in state.models:
        if model.metric != metric:
            continue
        bkey = (model.topic, subject)
        if bkey in state.baselines:
            continue
        pending = state.warmup.setdefault(bkey, [])
        pending.append(value)
        if len(pending) >= model.window:
            state.baselines[bkey] = sum(pending[:model.window]) / model.window
            del state.warmup[bkey]
    return state


def cghf_generate(state: CGHFState, tick: int, ctx: BlockContext):
    """Evaluate every model over the buffered samples; publish one assertion
    per subject whose condition just became true."""
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    for model in sorted(state.models, key=lambda m: m.topic):
        subjects = sorted(subject for (metric, subject) in state.buffer
                          if metric == model.metric)
        for subject in subjects:
            samples = state.buffer[(model.metric, subject)]
            bkey = (model.topic, subject)
            baseline = state.baselines.get(bkey)
            condition = False
            if baseline is not None and len(samples) >= model.min_samples:
                mean = sum(s.value for s in samples) / len(samples)
                condition = mean > model.factor * baseline
            if condition and state.armed.get(bkey, True):
                state.armed[bkey] = False
                state.assertion_counter += 1
                assertion = ContextAssertion(
                    topic=model.topic, subject=subject,
                    statement=model.statement,
                    evidence=tuple((s.tick, s.value) for s in samples[-3:]),
                    tick=tick)
                state.published.append(assertion)
                events.append(BlockEvent("context", subject,
                                         {"topic": model.topic,
                                          "statement": model.statement}))
                drafts.append(draft(
                    ProcedureKind.CONTEXT_NOTIFY, ctx.self_endpoint,
                    Topic(model.topic),
                    f"{ctx.slice_id}:context:{state.assertion_counter}",
                    {"topic": model.topic, "subject": subject,
                     "statement": model.statement,
                     "evidence": [list(e) for e in assertion.evidence]}))
            elif not condition:
                state.armed[bkey] = True
    return state, drafts, events


def handle(state: CGHFState, msg, ctx: BlockContext):
    drafts: list[Draft] = []
    events: list[BlockEvent] = []
    if msg.kind is ProcedureKind.CONTEXT_PUBLISH:
        payload = dict(msg.payload)
        cghf_ingest(
            state, metric=payload.get("metric", ""),
            subject=payload.get("subject", ""),
            value=float(payload.get("value", 0.0)),
            source=payload.get("source", msg.source.ident),
            tick=ctx.tick,
            external=bool(payload.get("external"))
            or msg.source.role is Role.OTHER_DOMAIN)
    return state, drafts, events


def tick_hook(state: CGHFState, ctx: BlockContext):
    return cghf_generate(state, ctx.tick, ctx)
