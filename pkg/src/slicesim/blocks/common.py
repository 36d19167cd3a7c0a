"""Shared policy types and the read-only context handed to block handlers."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from ..messages import Endpoint, Role


class Tech(str, Enum):
    CELLULAR = "cellular"
    WIFI = "wifi"
    FIXED = "fixed"


class AuthScheme(str, Enum):
    FULL = "full"
    LOW_SECURE = "low_secure"


class HandoverStyle(str, Enum):
    MAKE_BEFORE_BREAK = "mbb"
    BREAK_BEFORE_MAKE = "bbm"


class Anchoring(str, Enum):
    CENTRALISED = "centralised"
    DISTRIBUTED = "distributed"


class PathStrategy(str, Enum):
    SHORTEST_PATH = "shortest"
    LOAD_DISTRIBUTION = "load_distribution"


ALL_TECHS = frozenset(Tech)

#: How long a page may stay unanswered before reverting to idle.
DEFAULT_PAGE_TIMEOUT = 8

#: Load-distribution paths may be up to (1 + stretch) times the shortest.
DEFAULT_STRETCH = 0.5


@dataclass(frozen=True)
class MobilityPolicy:
    style: HandoverStyle
    anchoring: Anchoring = Anchoring.CENTRALISED
    allowed_techs: frozenset = ALL_TECHS
    page_timeout: int = DEFAULT_PAGE_TIMEOUT


@dataclass(frozen=True)
class SlicePolicy:
    auth_scheme: AuthScheme = AuthScheme.FULL
    mobility: MobilityPolicy | None = None
    path_strategy: PathStrategy = PathStrategy.SHORTEST_PATH
    stretch: float = DEFAULT_STRETCH


@dataclass(frozen=True)
class AccessNodeInfo:
    node_id: str
    tech: Tech
    area: str
    ingress: str     # forwarded-plane node the access node feeds


@dataclass(frozen=True)
class BlockEvent:
    kind: str
    subject: str
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BlockContext:
    """What a handler may read besides its own state: wiring, policy and the
    static access/topology directories of its slice.  Never mutated."""

    slice_id: str
    self_id: str
    role: Role
    tick: int
    seed: int
    peers: Mapping            # Role -> instance id within this slice
    policy: SlicePolicy
    access_nodes: Mapping     # node id -> AccessNodeInfo
    anchors: tuple = ()       # anchor candidate node ids
    ingress_latency: Mapping = field(default_factory=dict)  # (ingress, anchor) -> ticks
    global_cm: str | None = None
    slice_directory: Mapping = field(default_factory=dict)  # slice id -> local CM id

    @property
    def self_endpoint(self) -> Endpoint:
        return Endpoint(self.role, self.self_id)

    def has(self, role: Role) -> bool:
        return role in self.peers

    def peer_endpoint(self, role: Role) -> Endpoint:
        return Endpoint(role, self.peers[role])

    def nodes_in_area(self, area: str) -> tuple:
        return tuple(sorted(
            n for n, info in self.access_nodes.items() if info.area == area))
