import random

import pytest

from slotmesh.core import FlitRole, MeshTopology, NodeId, PatternKind, TrafficFlow
from slotmesh.hwconfig import (
    ChunkHeader,
    Framing,
    HeaderOverflow,
    MalformedHeader,
    RoutingTableEntry,
    SourceRouteHeader,
    TableOverflow,
    build_accelerator_config,
    build_routing_tables,
    config_dump,
    decode_next_port,
    encode_source_route,
    serialize_chunk,
    SR_EAST,
    SR_NOP,
    SR_NORTH,
    SR_OUTPUT,
    SR_SOUTH,
    SR_WEST,
    OH_EAST,
    OH_NORTH,
    OH_OUTPUT,
    OH_SOUTH,
    OH_WEST,
)
from slotmesh.core import Direction
from slotmesh.routing import EaParams, bfs_spanning_tree, route_flow, xy_route


def test_source_route_code_table():
    assert SR_EAST == 0b001
    assert SR_SOUTH == 0b010
    assert SR_WEST == 0b011
    assert SR_NORTH == 0b100
    assert SR_OUTPUT == 0b101
    assert SR_NOP == 0b000


def test_one_hot_code_table():
    assert OH_EAST == 0b00001
    assert OH_SOUTH == 0b00010
    assert OH_WEST == 0b00100
    assert OH_NORTH == 0b01000
    assert OH_OUTPUT == 0b10000


def test_encode_east_south_then_nop():
    header = encode_source_route([NodeId(0, 0), NodeId(1, 0), NodeId(1, 1)])
    assert header.bits() == "001010000"


def test_encode_empty_path_is_pure_table_mode():
    assert encode_source_route([NodeId(2, 2)]).bits() == "000"


def test_encode_unicast_appends_output_code():
    header = encode_source_route(
        [NodeId(0, 0), NodeId(1, 0)], eject_at_end=True
    )
    assert header.bits() == "001" + "101" + "000"


def test_decode_pops_first_entry():
    direction, rest = decode_next_port("001010000")
    assert direction is Direction.EAST
    assert rest == "010000"


def test_decode_nop_switches_mode():
    direction, rest = decode_next_port("000")
    assert direction is None
    assert rest == ""


def test_decode_rejects_reserved_codes():
    with pytest.raises(MalformedHeader):
        decode_next_port("110000")
    with pytest.raises(MalformedHeader):
        decode_next_port("111")


@pytest.mark.parametrize("trials", [2000])
def test_encode_decode_round_trip_random_paths(trials):
    rng = random.Random(17)
    for _ in range(trials):
        src = NodeId(rng.randint(0, 15), rng.randint(0, 15))
        dst = NodeId(rng.randint(0, 15), rng.randint(0, 15))
        mid = NodeId(rng.randint(0, 15), rng.randint(0, 15))
        path = xy_route(src, mid)
        path.extend(xy_route(mid, dst)[1:])
        header = encode_source_route(path, eject_at_end=True)
        bits = header.bits()
        walked = [path[0]]
        while True:
            direction, bits = decode_next_port(bits)
            if direction is None:
                break
            if direction is Direction.OUTPUT:
                continue
            walked.append(walked[-1].step(direction))
        assert bits == ""
        assert walked == path


def test_broadcast_mask_for_south_and_west():
    entry = RoutingTableEntry(flow_id=1, mask=OH_SOUTH | OH_WEST)
    assert entry.bits() == "00110"


def test_mask_for_east_south_and_output():
    entry = RoutingTableEntry(flow_id=1, mask=OH_EAST | OH_SOUTH | OH_OUTPUT)
    assert entry.bits() == "10011"


def test_scatter_tables_follow_tree_children():
    mesh = MeshTopology(width=4, height=4)
    hub = NodeId(1, 1)
    terminals = [NodeId(1, 1), NodeId(2, 1), NodeId(1, 2), NodeId(2, 2)]
    tree = bfs_spanning_tree(mesh, hub, terminals)
    tables = build_routing_tables(tree, flow_id=3)
    # The hub forwards east and south and consumes locally.
    assert tables[hub].bits() == "10011"
    leaf = NodeId(2, 2)
    assert tables[leaf].bits() == "10000"
    for node, entry in tables.items():
        assert entry.flow_id == 3
        assert 0 < entry.mask < 32


def test_gather_tables_point_at_parents():
    mesh = MeshTopology(width=4, height=4)
    hub = NodeId(1, 1)
    tree = bfs_spanning_tree(mesh, hub, [NodeId(1, 1), NodeId(3, 1)])
    tables = build_routing_tables(tree, flow_id=2, gather=True)
    assert tables[hub].mask == OH_OUTPUT
    assert tables[NodeId(3, 1)].mask == OH_WEST
    assert tables[NodeId(2, 1)].mask == OH_WEST


def test_serialize_chunk_counts():
    framing = Framing()
    header = ChunkHeader(0, "main", encode_source_route([NodeId(0, 0), NodeId(1, 0)], eject_at_end=True), 4)
    wire = 256
    flits = serialize_chunk(4 * wire, header, wire)
    assert len(flits) == 5
    assert flits[0].role is FlitRole.HEAD
    assert flits[-1].role is FlitRole.TAIL
    assert all(f.role is FlitRole.BODY for f in flits[1:-1])


def test_serialize_single_flit_chunk_when_header_fits():
    header = ChunkHeader(0, "main", encode_source_route([NodeId(0, 0), NodeId(1, 0)], eject_at_end=True), 1)
    flits = serialize_chunk(64, header, 256)
    assert len(flits) == 1
    assert flits[0].role is FlitRole.HEAD_TAIL


def test_header_overflow_guard():
    path = [NodeId(x, 0) for x in range(16)]
    header = ChunkHeader(0, "main", encode_source_route(path, eject_at_end=True), 1)
    with pytest.raises(HeaderOverflow):
        serialize_chunk(16, header, 32)


def test_chunk_framing_saves_headers_over_packet_framing():
    wire = 256
    volume = 64 * wire  # a 64-flit chunk
    chunk = Framing(mode="chunk")
    packet = Framing(mode="packet", packet_payload_flits=4)
    chunk_flits = chunk.wire_flits(volume, wire, route_entries=4)
    packet_flits = packet.wire_flits(volume, wire)
    assert chunk_flits == 64 + 1
    assert packet_flits == 64 + 16  # one header per 4-flit packet
    assert packet_flits - chunk_flits == 15


def test_table_overflow_detected_for_concurrent_classes():
    mesh = MeshTopology(width=4, height=4, wire_width=256)
    region = (NodeId(0, 0), NodeId(1, 0), NodeId(0, 1), NodeId(1, 1))
    plans = {}
    volumes = {}
    classes = {}
    for fid in range(4):
        flow = TrafficFlow(
            id=fid,
            kind=PatternKind.MULTICAST,
            volume=512,
            sources=(NodeId(3, 3),),
            destinations=region,
            ready_time=0,
            qos_deadline=100,
        )
        plans[fid] = route_flow(flow, mesh, {}, EaParams(max_intermediate_nodes=0))
        volumes[fid] = flow.volume
        classes[fid] = f"class{fid}"
    with pytest.raises(TableOverflow):
        build_accelerator_config(plans, volumes, 256, Framing(), classes)
    # The same four flows sharing one class fit a single table entry slot.
    shared = {fid: "layerX:weights" for fid in plans}
    build_accelerator_config(plans, volumes, 256, Framing(), shared)


def test_config_dump_is_deterministic_text():
    mesh = MeshTopology(width=4, height=4, wire_width=256)
    flow = TrafficFlow(
        id=0,
        kind=PatternKind.MULTICAST,
        volume=512,
        sources=(NodeId(3, 3),),
        destinations=(NodeId(0, 0), NodeId(1, 0), NodeId(0, 1)),
        ready_time=0,
        qos_deadline=100,
    )
    plan = route_flow(flow, mesh, {}, EaParams(max_intermediate_nodes=0))
    config = build_accelerator_config({0: plan}, {0: 512}, 256, Framing(), {0: "l:w"})
    d1 = config_dump(config)
    d2 = config_dump(config)
    assert d1 == d2
    assert d1.startswith("wire_width 256\nframing chunk\n")
    assert "mask" in d1 and "header flow 0" in d1
