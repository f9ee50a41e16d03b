"""Mesh topology, traffic, and time domain types shared across the package.

Axis convention (fixed project-wide): x grows East, y grows South, with
(0, 0) at the top-left corner of the array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, Optional, Sequence


class SlotMeshError(Exception):
    """Base class for all package errors."""


class ValidationError(SlotMeshError):
    """Invalid workload, topology, or configuration input."""


class NonAdjacentHop(ValidationError):
    """A path contains a step between non-neighbouring nodes."""


class Direction(IntEnum):
    """Mesh port directions plus the node-local output port."""

    EAST = 0
    SOUTH = 1
    WEST = 2
    NORTH = 3
    OUTPUT = 4

    @property
    def delta(self) -> tuple[int, int]:
        return _DIR_DELTA[self]

    @property
    def opposite(self) -> "Direction":
        return _DIR_OPPOSITE[self]


_DIR_DELTA = {
    Direction.EAST: (1, 0),
    Direction.SOUTH: (0, 1),
    Direction.WEST: (-1, 0),
    Direction.NORTH: (0, -1),
    Direction.OUTPUT: (0, 0),
}

_DIR_OPPOSITE = {
    Direction.EAST: Direction.WEST,
    Direction.WEST: Direction.EAST,
    Direction.SOUTH: Direction.NORTH,
    Direction.NORTH: Direction.SOUTH,
    Direction.OUTPUT: Direction.OUTPUT,
}


@dataclass(frozen=True, order=True)
class NodeId:
    """Column/row coordinate of one tile or memory-controller attachment."""

    x: int
    y: int

    def step(self, d: Direction) -> "NodeId":
        dx, dy = d.delta
        return NodeId(self.x + dx, self.y + dy)

    def __repr__(self) -> str:
        return f"({self.x},{self.y})"


def manhattan(a: NodeId, b: NodeId) -> int:
    """Hop distance between two nodes on the mesh."""
    return abs(a.x - b.x) + abs(a.y - b.y)


def direction_between(a: NodeId, b: NodeId) -> Direction:
    """Port direction leading from `a` to its neighbour `b`."""
    dx, dy = b.x - a.x, b.y - a.y
    for d, delta in _DIR_DELTA.items():
        if d is not Direction.OUTPUT and delta == (dx, dy):
            return d
    raise NonAdjacentHop(f"{a} and {b} are not neighbours")


class PortKind(Enum):
    """Distinguishes mesh wires from node-local injection/ejection ports."""

    MESH = "mesh"
    INJECT = "inject"
    EJECT = "eject"


@dataclass(frozen=True)
class ChannelId:
    """One directed channel: a mesh wire, or a local port of one node.

    Local injection and ejection ports at the same node are distinct
    channels, so memory-controller injection never contends with tile
    ejection at that router.
    """

    src: NodeId
    dst: NodeId
    kind: PortKind = PortKind.MESH

    def __post_init__(self) -> None:
        if self.kind is PortKind.MESH:
            if manhattan(self.src, self.dst) != 1:
                raise NonAdjacentHop(f"channel {self.src}->{self.dst} is not one hop")
        elif self.src != self.dst:
            raise ValidationError("local port channels must have src == dst")

    def __repr__(self) -> str:
        if self.kind is PortKind.MESH:
            return f"{self.src}->{self.dst}"
        return f"{self.src}.{self.kind.value}"


def inject_port(node: NodeId) -> ChannelId:
    return ChannelId(node, node, PortKind.INJECT)


def eject_port(node: NodeId) -> ChannelId:
    return ChannelId(node, node, PortKind.EJECT)


@dataclass(frozen=True)
class MeshTopology:
    """A width x height mesh with designated memory-controller nodes.

    `wire_width` is the flit payload size in bits; `channel_slot_cost` is
    the number of scheduling slots a head flit needs to advance one hop.
    """

    width: int
    height: int
    mc_nodes: tuple[NodeId, ...] = ()
    wire_width: int = 256
    channel_slot_cost: int = 1

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError("mesh dimensions must be positive")
        if self.wire_width <= 0:
            raise ValidationError("wire_width must be positive")
        if self.channel_slot_cost < 1:
            raise ValidationError("channel_slot_cost must be >= 1")
        object.__setattr__(self, "mc_nodes", tuple(self.mc_nodes))
        seen = set()
        for mc in self.mc_nodes:
            if mc in seen:
                raise ValidationError(f"duplicate memory controller {mc}")
            seen.add(mc)
            if not self.contains(mc):
                raise ValidationError(f"memory controller {mc} outside mesh")
            if not self.on_boundary(mc):
                raise ValidationError(f"memory controller {mc} not on array boundary")

    def contains(self, n: NodeId) -> bool:
        return 0 <= n.x < self.width and 0 <= n.y < self.height

    def on_boundary(self, n: NodeId) -> bool:
        return n.x in (0, self.width - 1) or n.y in (0, self.height - 1)

    def nodes(self) -> Iterator[NodeId]:
        for y in range(self.height):
            for x in range(self.width):
                yield NodeId(x, y)

    def neighbors(self, n: NodeId) -> list[NodeId]:
        """Adjacent nodes in fixed E, S, W, N order."""
        out = []
        for d in (Direction.EAST, Direction.SOUTH, Direction.WEST, Direction.NORTH):
            m = n.step(d)
            if self.contains(m):
                out.append(m)
        return out

    def mesh_channels(self) -> list[ChannelId]:
        """All directed wire channels, two per adjacent node pair."""
        out = []
        for n in self.nodes():
            for m in self.neighbors(n):
                out.append(ChannelId(n, m))
        return out

    @property
    def size(self) -> int:
        return self.width * self.height


class PatternKind(Enum):
    """Primary traffic patterns; Unicast is the one-to-one degenerate case."""

    MULTICAST = "multicast"
    REDUCE = "reduce"
    LINK_TRANSFER = "link_transfer"
    UNICAST = "unicast"


# A SlotIndex is a plain non-negative int: one slot is the time one flit
# takes to pass one channel, router stage included.
SlotIndex = int


@dataclass(frozen=True)
class TrafficFlow:
    """One logical communication pattern extracted from a workload."""

    id: int
    kind: PatternKind
    volume: int
    sources: tuple[NodeId, ...]
    destinations: tuple[NodeId, ...]
    ready_time: SlotIndex
    qos_deadline: SlotIndex

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "destinations", tuple(self.destinations))
        if self.volume <= 0:
            raise ValidationError(f"flow {self.id}: volume must be positive")
        if not self.sources or not self.destinations:
            raise ValidationError(f"flow {self.id}: needs sources and destinations")
        if self.ready_time > self.qos_deadline:
            raise ValidationError(f"flow {self.id}: ready time after deadline")
        if self.kind is PatternKind.MULTICAST and len(self.sources) != 1:
            raise ValidationError(f"flow {self.id}: multicast needs a single source")
        if self.kind is PatternKind.REDUCE and len(self.destinations) != 1:
            raise ValidationError(f"flow {self.id}: reduce needs a single destination")
        if self.kind in (PatternKind.UNICAST, PatternKind.LINK_TRANSFER):
            if len(self.sources) != 1 or len(self.destinations) != 1:
                raise ValidationError(f"flow {self.id}: {self.kind.value} is one-to-one")

    @property
    def source(self) -> NodeId:
        return self.sources[0]

    @property
    def destination(self) -> NodeId:
        return self.destinations[0]


class FlitRole(Enum):
    HEAD = "head"
    BODY = "body"
    TAIL = "tail"
    HEAD_TAIL = "head_tail"


@dataclass(frozen=True)
class Flit:
    """One wire-level flow-control unit of a serialized flow."""

    flow_id: int
    seq: int
    role: FlitRole
    payload_bits: int = 0


def channels_of_path(path: Sequence[NodeId]) -> list[ChannelId]:
    """Directed channel per hop of a node path; empty for a single node.

    Raises NonAdjacentHop when consecutive nodes are not neighbours.
    """
    out = []
    for a, b in zip(path, path[1:]):
        if manhattan(a, b) != 1:
            raise NonAdjacentHop(f"hop {a}->{b} is not adjacent")
        out.append(ChannelId(a, b))
    return out


def flit_count(volume: int, wire_width: int) -> int:
    """Number of payload flits needed to carry `volume` bits."""
    if volume <= 0 or wire_width <= 0:
        raise ValidationError("volume and wire_width must be positive")
    return -(-volume // wire_width)
