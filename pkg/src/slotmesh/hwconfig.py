"""Bit-exact router configuration: source-route headers, one-hot routing
tables, and chunk serialization under the flattened single-header framing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import (
    Direction,
    Flit,
    FlitRole,
    NodeId,
    PatternKind,
    SlotMeshError,
    ValidationError,
    direction_between,
    flit_count,
)
from .routing import RoutePlan, SpanningTree, Transmission, plan_transmissions


class MalformedHeader(SlotMeshError):
    """A source-route field contains a reserved code."""


class HeaderOverflow(ValidationError):
    """A chunk header does not fit into a single flit."""


class TableOverflow(ValidationError):
    """A router would need more concurrent routing-table entries than it has."""


# 3-bit source-routing codes; NOP terminates the field and hands the flow
# over to table-based routing.
SR_EAST = 0b001
SR_SOUTH = 0b010
SR_WEST = 0b011
SR_NORTH = 0b100
SR_OUTPUT = 0b101
SR_NOP = 0b000

_DIR_TO_CODE = {
    Direction.EAST: SR_EAST,
    Direction.SOUTH: SR_SOUTH,
    Direction.WEST: SR_WEST,
    Direction.NORTH: SR_NORTH,
    Direction.OUTPUT: SR_OUTPUT,
}
_CODE_TO_DIR = {code: d for d, code in _DIR_TO_CODE.items()}

# 5-bit one-hot output masks for table-based routing; bit order (MSB to
# LSB) is Output, North, West, South, East so unions stay one-hot per port.
OH_EAST = 0b00001
OH_SOUTH = 0b00010
OH_WEST = 0b00100
OH_NORTH = 0b01000
OH_OUTPUT = 0b10000

_DIR_TO_ONEHOT = {
    Direction.EAST: OH_EAST,
    Direction.SOUTH: OH_SOUTH,
    Direction.WEST: OH_WEST,
    Direction.NORTH: OH_NORTH,
    Direction.OUTPUT: OH_OUTPUT,
}

MAX_TABLE_ENTRIES = 3


@dataclass(frozen=True)
class SourceRouteHeader:
    """NOP-terminated sequence of 3-bit port codes."""

    codes: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.codes or self.codes[-1] != SR_NOP:
            raise ValidationError("source-route field must end with NOP")
        if SR_NOP in self.codes[:-1]:
            raise ValidationError("NOP may only terminate the field")

    def bits(self) -> str:
        return "".join(f"{c:03b}" for c in self.codes)

    def __len__(self) -> int:
        return len(self.codes)


def encode_source_route(path: Sequence[NodeId], eject_at_end: bool = False) -> SourceRouteHeader:
    """Per-hop direction codes of a path, NOP appended.

    With `eject_at_end` the destination's local Output port is encoded
    explicitly (pure source routing); otherwise the field ends at the last
    hop and table mode takes over at the path's final router.
    """
    codes = [_DIR_TO_CODE[direction_between(a, b)] for a, b in zip(path, path[1:])]
    if eject_at_end:
        codes.append(SR_OUTPUT)
    codes.append(SR_NOP)
    return SourceRouteHeader(tuple(codes))


def decode_next_port(bits: str) -> tuple[Optional[Direction], str]:
    """Pop the first 3-bit code off a header field.

    Returns (direction, remainder); a None direction is the NOP mode
    switch. Reserved codes raise MalformedHeader.
    """
    if len(bits) < 3:
        raise MalformedHeader("source-route field exhausted")
    code = int(bits[:3], 2)
    if code == SR_NOP:
        return None, bits[3:]
    if code not in _CODE_TO_DIR:
        raise MalformedHeader(f"reserved port code {code:03b}")
    return _CODE_TO_DIR[code], bits[3:]


@dataclass(frozen=True)
class RoutingTableEntry:
    """One per-flow entry of a router's table: a 5-bit one-hot output union."""

    flow_id: int
    mask: int

    def __post_init__(self) -> None:
        if not 0 < self.mask < 32:
            raise ValidationError("mask must be a nonzero 5-bit value")

    def bits(self) -> str:
        return f"{self.mask:05b}"

    def directions(self) -> list[Direction]:
        return [d for d, bit in _DIR_TO_ONEHOT.items() if self.mask & bit]


def build_routing_tables(
    tree: SpanningTree, flow_id: int, gather: bool = False
) -> dict[NodeId, RoutingTableEntry]:
    """Table entries realizing a spanning tree.

    Scatter mode (multicast) forwards to every child and adds the local
    Output bit at terminal consumers. Gather mode (reduce) forwards toward
    the parent, with the root consuming locally.
    """
    entries: dict[NodeId, RoutingTableEntry] = {}
    for node in tree.nodes():
        mask = 0
        if gather:
            if node == tree.root:
                mask = OH_OUTPUT
            else:
                mask = _DIR_TO_ONEHOT[direction_between(node, tree.parent[node])]
        else:
            for child in tree.children(node):
                mask |= _DIR_TO_ONEHOT[direction_between(node, child)]
            if node in tree.terminals:
                mask |= OH_OUTPUT
        entries[node] = RoutingTableEntry(flow_id=flow_id, mask=mask)
    return entries


@dataclass(frozen=True)
class Framing:
    """How a flow's bits are carried on the wire.

    Chunk mode sends one header flit per transmission (the flattened
    scheme); packet mode re-introduces one header flit per fixed-size
    packet, matching traditional NoC framing.
    """

    mode: str = "chunk"
    packet_payload_flits: int = 8
    tag_bits: int = 2
    length_bits: int = 16

    def __post_init__(self) -> None:
        if self.mode not in ("chunk", "packet"):
            raise ValidationError("framing mode must be 'chunk' or 'packet'")
        if self.packet_payload_flits < 1:
            raise ValidationError("packet payload must be >= 1 flit")

    def header_bits(self, route_entries: int) -> int:
        return self.tag_bits + self.length_bits + 3 * route_entries

    def wire_flits(self, volume: int, wire_width: int, route_entries: int = 1) -> int:
        """Total flits a transmission occupies a channel for."""
        payload = flit_count(volume, wire_width)
        if self.mode == "packet":
            packets = -(-payload // self.packet_payload_flits)
            return payload + packets
        header = self.header_bits(route_entries)
        if header > wire_width:
            raise HeaderOverflow(
                f"{header}-bit header exceeds the {wire_width}-bit flit"
            )
        if payload == 1 and header + volume <= wire_width:
            return 1
        return payload + 1


@dataclass(frozen=True)
class ChunkHeader:
    """Single header of one transmitted data chunk."""

    flow_id: int
    tx_key: str
    route: SourceRouteHeader
    payload_flits: int


def serialize_chunk(
    volume: int, header: ChunkHeader, wire_width: int, framing: Framing = Framing()
) -> list[Flit]:
    """Flit sequence of one chunk: a head flit carrying the header, body
    flits, and a tail; a single head_tail flit when everything fits."""
    if volume <= 0:
        raise ValidationError("chunk volume must be positive")
    header_bits = framing.tag_bits + framing.length_bits + 3 * len(header.route)
    if header_bits > wire_width:
        raise HeaderOverflow(f"{header_bits}-bit header exceeds {wire_width}-bit flit")
    payload = flit_count(volume, wire_width)
    if payload == 1 and header_bits + volume <= wire_width:
        return [Flit(header.flow_id, 0, FlitRole.HEAD_TAIL, header_bits + volume)]
    flits = [Flit(header.flow_id, 0, FlitRole.HEAD, header_bits)]
    remaining = volume
    for seq in range(1, payload + 1):
        bits = min(wire_width, remaining)
        remaining -= bits
        role = FlitRole.TAIL if seq == payload else FlitRole.BODY
        flits.append(Flit(header.flow_id, seq, role, bits))
    return flits


@dataclass
class AcceleratorConfig:
    """Uploadable router state for one workload: per-router tables plus the
    per-transmission chunk headers."""

    wire_width: int
    framing: Framing
    tables: dict[NodeId, dict[int, RoutingTableEntry]]
    headers: dict[tuple[int, str], ChunkHeader]
    table_classes: dict[int, str] = field(default_factory=dict)

    def lookup(self, node: NodeId, flow_id: int) -> RoutingTableEntry:
        try:
            return self.tables[node][flow_id]
        except KeyError:
            raise MalformedHeader(
                f"router {node} has no table entry for flow {flow_id}"
            ) from None

    def header(self, flow_id: int, tx_key: str) -> ChunkHeader:
        return self.headers[(flow_id, tx_key)]


def _transmission_header(
    plan: RoutePlan, tx: Transmission, volume: int, wire_width: int, framing: Framing
) -> ChunkHeader:
    table_mode_end = tx.tree is not None and len(tx.tree.terminals) > 1
    if plan.kind is PatternKind.REDUCE and tx.key.startswith("gather"):
        # Gather legs run in table mode from their first router.
        route = SourceRouteHeader((SR_NOP,))
    else:
        route = encode_source_route(tx.path, eject_at_end=not table_mode_end)
    payload = flit_count(volume, wire_width)
    return ChunkHeader(plan.flow_id, tx.key, route, payload)


def build_accelerator_config(
    plans: dict[int, RoutePlan],
    volumes: dict[int, int],
    wire_width: int,
    framing: Framing = Framing(),
    flow_classes: Optional[dict[int, str]] = None,
    enforce_table_limit: Optional[bool] = None,
) -> AcceleratorConfig:
    """Emit headers and routing tables for a routed flow set.

    `flow_classes` groups flows that reuse one table entry across
    iterations (for example a layer's per-iteration weight multicasts);
    when given, the per-router bound of MAX_TABLE_ENTRIES concurrent
    classes is enforced.
    """
    if enforce_table_limit is None:
        enforce_table_limit = flow_classes is not None
    tables: dict[NodeId, dict[int, RoutingTableEntry]] = {}
    headers: dict[tuple[int, str], ChunkHeader] = {}
    router_classes: dict[NodeId, set[str]] = {}

    for flow_id in sorted(plans):
        plan = plans[flow_id]
        volume = volumes[flow_id]
        table_entries: dict[NodeId, RoutingTableEntry] = {}
        if plan.unicast_legs is None:
            if plan.kind is PatternKind.MULTICAST and len(plan.phase2_tree.terminals) > 1:
                table_entries = build_routing_tables(plan.phase2_tree, flow_id)
            elif plan.kind is PatternKind.REDUCE:
                table_entries = build_routing_tables(plan.phase2_tree, flow_id, gather=True)
        for node, entry in table_entries.items():
            tables.setdefault(node, {})[flow_id] = entry
            cls = (flow_classes or {}).get(flow_id, f"flow:{flow_id}")
            router_classes.setdefault(node, set()).add(cls)

        for tx in plan_transmissions(plan):
            header = _transmission_header(plan, tx, volume, wire_width, framing)
            if framing.mode == "chunk" and framing.header_bits(len(header.route)) > wire_width:
                raise HeaderOverflow(
                    f"flow {flow_id} {tx.key}: header exceeds {wire_width}-bit flit"
                )
            headers[(flow_id, tx.key)] = header

    if enforce_table_limit:
        for node, classes in sorted(router_classes.items(), key=lambda kv: (kv[0].y, kv[0].x)):
            if len(classes) > MAX_TABLE_ENTRIES:
                raise TableOverflow(
                    f"router {node} needs {len(classes)} concurrent entries "
                    f"({', '.join(sorted(classes))})"
                )

    table_classes = {
        fid: (flow_classes or {}).get(fid, f"flow:{fid}") for fid in sorted(plans)
    }
    return AcceleratorConfig(
        wire_width=wire_width,
        framing=framing,
        tables=tables,
        headers=headers,
        table_classes=table_classes,
    )


def config_dump(config: AcceleratorConfig) -> str:
    """Deterministic text dump of a configuration, golden-test friendly."""
    lines = [f"wire_width {config.wire_width}", f"framing {config.framing.mode}"]
    for node in sorted(config.tables, key=lambda n: (n.y, n.x)):
        lines.append(f"router {node.x},{node.y}")
        for flow_id in sorted(config.tables[node]):
            entry = config.tables[node][flow_id]
            lines.append(f"  flow {flow_id} mask {entry.bits()}")
    for (flow_id, tx_key) in sorted(config.headers):
        header = config.headers[(flow_id, tx_key)]
        lines.append(
            f"header flow {flow_id} {tx_key} route {header.route.bits()} "
            f"payload_flits {header.payload_flits}"
        )
    return "\n".join(lines) + "\n"
