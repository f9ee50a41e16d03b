"""Cycle-accurate model of the configured single-VC fabric.

Routers have a two-cycle pipeline, one single-flit register per input
port, and no arbiters: the injection schedule guarantees every channel is
claimed by at most one flit per slot, and any double claim aborts the run
as a scheduler bug. Routing decisions are taken from the uploaded
configuration only (header decoding and table lookups), never from the
route plans that produced it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..core import (
    ChannelId,
    Direction,
    MeshTopology,
    NodeId,
    SlotMeshError,
    eject_port,
    inject_port,
)
from ..hwconfig import AcceleratorConfig, decode_next_port
from ..scheduling import InjectionSchedule, ScheduledTransmission


class SimulationError(SlotMeshError):
    """The simulated hardware reached an inconsistent state."""


class RuntimeConflict(SimulationError):
    """Two flits demanded one channel in one slot: the schedule is broken."""


@dataclass
class FlowTiming:
    flow_id: int
    injection: int
    head_arrival: int
    tail_arrival: int
    node_arrival: dict[NodeId, int] = field(default_factory=dict)


@dataclass
class SimResult:
    """Per-flow delivery times and channel usage of one simulation run."""

    unit: str
    flows: dict[int, FlowTiming]
    channel_busy: dict[ChannelId, int]
    makespan: int
    blocked_flit_events: int = 0
    cycles_per_slot: int = 1
    last_injection_cycle: int = 0
    trace: Optional[list[str]] = None


@dataclass(frozen=True)
class _RouteStep:
    node: NodeId
    offset_slots: int  # head-arrival offset from the injection slot
    mesh_outputs: tuple[Direction, ...]
    deliver: bool


def _decode_walk(
    source: NodeId,
    flow_id: int,
    header_bits: str,
    config: AcceleratorConfig,
    mesh: MeshTopology,
) -> list[_RouteStep]:
    """Replay the hybrid-routing decisions a head flit makes at each router."""
    steps: list[_RouteStep] = []
    frontier: list[tuple[NodeId, int, Optional[str]]] = [(source, 0, header_bits)]
    visited: set[tuple[NodeId, int]] = set()
    while frontier:
        node, offset, bits = frontier.pop(0)
        if (node, offset) in visited:
            raise SimulationError(f"flow {flow_id}: routing loop at {node}")
        visited.add((node, offset))
        if not mesh.contains(node):
            raise SimulationError(f"flow {flow_id} routed off-mesh at {node}")
        if bits is not None:
            direction, rest = decode_next_port(bits)
            if direction is None:
                bits = None  # NOP: fall through to table mode at this router
            elif direction is Direction.OUTPUT:
                steps.append(_RouteStep(node, offset, (), True))
                continue
            else:
                steps.append(_RouteStep(node, offset, (direction,), False))
                frontier.append((node.step(direction), offset + mesh.channel_slot_cost, rest))
                continue
        entry = config.lookup(node, flow_id)
        outputs = entry.directions()
        mesh_dirs = tuple(d for d in outputs if d is not Direction.OUTPUT)
        deliver = Direction.OUTPUT in outputs
        steps.append(_RouteStep(node, offset, mesh_dirs, deliver))
        for d in mesh_dirs:
            frontier.append((node.step(d), offset + mesh.channel_slot_cost, None))
    return steps


def simulate_metro(
    config: AcceleratorConfig,
    schedule: InjectionSchedule,
    mesh: MeshTopology,
    router_cycles: int = 2,
    wire_cycles: int = 1,
    collect_trace: bool = False,
) -> SimResult:
    """Run every scheduled transmission through the configured fabric.

    One scheduling slot maps to router_cycles + wire_cycles cycles, so a
    flit advances one hop per slot and a channel carries one flit per
    slot. Raises RuntimeConflict on any double-claimed channel or on a
    fan-out injected before its gather legs delivered.
    """
    cps = router_cycles + wire_cycles
    claims: dict[tuple[ChannelId, int], tuple[int, str, int]] = {}
    busy: dict[ChannelId, int] = {}
    trace: Optional[list[str]] = [] if collect_trace else None
    timings: dict[int, FlowTiming] = {}
    makespan = 0

    def claim(channel: ChannelId, slot: int, flow_id: int, key: str, seq: int) -> None:
        other = claims.get((channel, slot))
        if other is not None:
            raise RuntimeConflict(
                f"slot {slot}: flow {flow_id}/{key} and flow {other[0]}/{other[1]} "
                f"both claim {channel}"
            )
        claims[(channel, slot)] = (flow_id, key, seq)
        busy[channel] = busy.get(channel, 0) + 1

    for flow_id in sorted(schedule.flows):
        fs = schedule.flows[flow_id]
        timing = FlowTiming(
            flow_id=flow_id,
            injection=fs.injection_slot,
            head_arrival=-1,
            tail_arrival=-1,
        )
        gather_delivered = 0
        for st in fs.transmissions:
            if st.tx.after_gather and st.inject_slot < gather_delivered:
                raise RuntimeConflict(
                    f"flow {flow_id}: fan-out injected at slot {st.inject_slot} "
                    f"before partials arrived at slot {gather_delivered}"
                )
            arrivals = _run_transmission(
                st, config, mesh, claim, trace, cps, router_cycles
            )
            for node, tail_slot in arrivals.items():
                timing.node_arrival[node] = max(
                    timing.node_arrival.get(node, 0), tail_slot
                )
                makespan = max(makespan, tail_slot)
            if not st.tx.after_gather:
                gather_delivered = max(gather_delivered, max(arrivals.values()))
        head = min(
            st.inject_slot + (len(st.tx.path) - 1) * mesh.channel_slot_cost
            for st in fs.transmissions
        )
        timing.head_arrival = head
        timing.tail_arrival = max(timing.node_arrival.values())
        timings[flow_id] = timing

    return SimResult(
        unit="slot",
        flows=timings,
        channel_busy=busy,
        makespan=makespan,
        blocked_flit_events=0,
        cycles_per_slot=cps,
        trace=trace,
    )


def _run_transmission(
    st: ScheduledTransmission,
    config: AcceleratorConfig,
    mesh: MeshTopology,
    claim,
    trace: Optional[list[str]],
    cps: int,
    router_cycles: int,
) -> dict[NodeId, int]:
    """Advance one worm through the fabric; returns per-consumer tail slots."""
    tx = st.tx
    header = config.header(tx.flow_id, tx.key)
    steps = _decode_walk(tx.source, tx.flow_id, header.route.bits(), config, mesh)
    inject = st.inject_slot
    arrivals: dict[NodeId, int] = {}

    for seq in range(st.s_ser):
        claim(inject_port(tx.source), inject + seq, tx.flow_id, tx.key, seq)
        for step in steps:
            slot = inject + step.offset_slots + seq
            for direction in step.mesh_outputs:
                channel = ChannelId(step.node, step.node.step(direction))
                claim(channel, slot, tx.flow_id, tx.key, seq)
            if step.deliver:
                claim(eject_port(step.node), slot, tx.flow_id, tx.key, seq)
                if seq == st.s_ser - 1:
                    arrivals[step.node] = slot + 1
            if trace is not None:
                outs = ",".join(d.name for d in step.mesh_outputs) or "-"
                cycle = slot * cps + router_cycles
                trace.append(
                    f"cycle={cycle} slot={slot} flow={tx.flow_id} tx={tx.key} "
                    f"flit={seq} at={step.node} out={outs}"
                    + (" deliver" if step.deliver else "")
                )

    expected = set(tx.consumers)
    if set(arrivals) != expected:
        missing = expected - set(arrivals)
        raise SimulationError(
            f"flow {tx.flow_id}/{tx.key}: consumers {sorted(missing, key=str)} "
            f"never received data"
        )
    return arrivals
