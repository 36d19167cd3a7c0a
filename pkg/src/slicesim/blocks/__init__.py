"""The six building blocks as deterministic message-driven state machines.

Each module exposes a state dataclass, the named operations over it, and a
``handle(state, msg, ctx)`` transition returning ``(state, drafts, events)``.
Handlers are deterministic; the engine invokes them sequentially per run.
"""

from . import af, cghf, cm, fm, mm, sam  # noqa: F401
from .common import (  # noqa: F401
    AccessNodeInfo, Anchoring, AuthScheme, BlockContext, BlockEvent,
    HandoverStyle, MobilityPolicy, PathStrategy, SlicePolicy, Tech,
)
