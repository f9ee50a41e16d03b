"""Cycle-accurate virtual-channel NoC baseline.

Routers charge a four-cycle pipeline per flit with one-cycle links and
credit-based backpressure; packets are injected the moment they are ready
and contend for channels, so head-of-line blocking and tree saturation
emerge on their own. VC 0 is a dimension-ordered escape channel: a head
that finds every main VC taken may re-route onto it, after which the
packet stays on escape VCs and follows X-Y order to its destination.

Measurement convention: ejection consumes one flit per node per cycle,
one cycle after arrival, so a lone packet of n flits over H hops is
delivered (router_cycles + wire_cycles) * H + n cycles after injection.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..core import (
    ChannelId,
    Direction,
    MeshTopology,
    NodeId,
    PatternKind,
    TrafficFlow,
    ValidationError,
    direction_between,
    flit_count,
)
from ..routing import baseline_path
from .fabric import FlowTiming, SimResult, SimulationError

BASELINE_ALGS = ("dor", "xyyx", "romm", "mad")

_MESH_OUT = (Direction.EAST, Direction.SOUTH, Direction.WEST, Direction.NORTH)
_IN_PORTS = (Direction.EAST, Direction.SOUTH, Direction.WEST, Direction.NORTH, Direction.OUTPUT)
# OUTPUT doubles as the local port label on both sides of a router.


class DeadlockDetected(SimulationError):
    """No flit moved for the whole deadlock budget despite pending traffic."""


@dataclass(frozen=True)
class NocParams:
    """Baseline router configuration."""

    router_cycles: int = 4
    wire_cycles: int = 1
    vcs: int = 8
    buffer_depth: int = 8
    deadlock_budget: int = 100_000
    mc_bits_per_cycle: Optional[int] = None  # optional MC injection rate cap

    def __post_init__(self) -> None:
        if self.vcs < 1 or self.buffer_depth < 1:
            raise ValidationError("need at least one VC and one buffer slot")

    @property
    def escape_vc(self) -> Optional[int]:
        """VC 0 is the escape channel whenever more than one VC exists."""
        return 0 if self.vcs > 1 else None

    @property
    def main_vcs(self) -> tuple[int, ...]:
        return tuple(range(1, self.vcs)) if self.vcs > 1 else (0,)


@dataclass
class _Packet:
    uid: int
    flow_id: int
    copy: int
    src: NodeId
    dst: NodeId
    flits: int
    ready: int
    next_hop: dict[NodeId, NodeId] = field(default_factory=dict)
    escaped: bool = False


class _Vc:
    __slots__ = ("fifo", "owner", "out_dir", "out_vc")

    def __init__(self) -> None:
        self.fifo: deque = deque()  # entries: [packet, seq, arrive_cycle]
        self.owner: Optional[int] = None  # packet uid that reserved this VC
        self.out_dir: Optional[Direction] = None
        self.out_vc: Optional[int] = None


def lower_to_unicasts(
    flows: Sequence[TrafficFlow],
) -> list[tuple[TrafficFlow, int, NodeId, NodeId]]:
    """Per-terminal unicast copies of every flow.

    A multicast sends a separate full copy of its data to each
    destination; a reduce sends every source's contribution to the
    destination individually.
    """
    out = []
    for flow in flows:
        if flow.kind is PatternKind.MULTICAST:
            for idx, dst in enumerate(flow.destinations):
                out.append((flow, idx, flow.source, dst))
        elif flow.kind is PatternKind.REDUCE:
            for idx, src in enumerate(flow.sources):
                out.append((flow, idx, src, flow.destination))
        else:
            out.append((flow, 0, flow.source, flow.destination))
    return out


def copy_terminal(flow: TrafficFlow, copy: int) -> NodeId:
    if flow.kind is PatternKind.MULTICAST:
        return flow.destinations[copy]
    return flow.destination


def _dor_next(node: NodeId, dst: NodeId) -> Direction:
    if dst.x != node.x:
        return Direction.EAST if dst.x > node.x else Direction.WEST
    if dst.y != node.y:
        return Direction.SOUTH if dst.y > node.y else Direction.NORTH
    return Direction.OUTPUT


def _minimal_dirs(node: NodeId, dst: NodeId) -> list[Direction]:
    dirs = []
    if dst.x != node.x:
        dirs.append(Direction.EAST if dst.x > node.x else Direction.WEST)
    if dst.y != node.y:
        dirs.append(Direction.SOUTH if dst.y > node.y else Direction.NORTH)
    return dirs


class _BaselineSim:
    def __init__(
        self,
        flows: Sequence[TrafficFlow],
        mesh: MeshTopology,
        alg: str,
        params: NocParams,
        packet_payload_flits: int,
        cycles_per_slot: int,
        seed: int,
        probe: Optional[Callable[[int, frozenset[ChannelId]], None]],
        probe_interval: int,
    ) -> None:
        self.mesh = mesh
        self.alg = alg
        self.params = params
        self.rng = random.Random(f"{seed}:{alg}")
        self.probe = probe
        self.probe_interval = probe_interval
        self.cycles_per_slot = cycles_per_slot
        self.flows = list(flows)

        self.packets: list[_Packet] = []
        uid = 0
        for flow, copy, src, dst in lower_to_unicasts(flows):
            payload = flit_count(flow.volume, mesh.wire_width)
            pkt_count = -(-payload // packet_payload_flits)
            for p in range(pkt_count):
                body = min(packet_payload_flits, payload - p * packet_payload_flits)
                self.packets.append(
                    _Packet(
                        uid=uid,
                        flow_id=flow.id,
                        copy=copy,
                        src=src,
                        dst=dst,
                        flits=body + 1,
                        ready=flow.ready_time * cycles_per_slot,
                    )
                )
                uid += 1

        self.queues: dict[NodeId, deque[_Packet]] = {}
        for pkt in sorted(self.packets, key=lambda p: (p.ready, p.flow_id, p.copy, p.uid)):
            self.queues.setdefault(pkt.src, deque()).append(pkt)

        self.vcs: dict[tuple[NodeId, Direction, int], _Vc] = {}
        self.credits: dict[tuple[NodeId, Direction, int], int] = {}
        self.vc_rr: dict[tuple[NodeId, Direction], int] = {}
        self.sw_rr: dict[tuple[NodeId, Direction], int] = {}
        self.arrivals: dict[int, list] = {}
        self.credit_events: dict[int, list] = {}
        self.active: set[NodeId] = set(self.queues)
        self.inject_state: dict[NodeId, Optional[tuple[_Packet, int, int]]] = {}
        self.next_inject_ok: dict[NodeId, int] = {}

        self.total_flits = sum(p.flits for p in self.packets)
        self.delivered_flits = 0
        self.flits_in_network = 0
        self.blocked_events = 0
        self.copy_tail: dict[tuple[int, int], int] = {}
        self.head_seen: dict[int, int] = {}
        self.inject_seen: dict[int, int] = {}
        self.channel_busy: dict[ChannelId, int] = {}
        self.last_full: dict[tuple[NodeId, Direction], int] = {}
        self.last_injection_cycle = 0
        self.cycle = 0

    # -- helpers -------------------------------------------------------

    def vc(self, node: NodeId, port: Direction, idx: int) -> _Vc:
        key = (node, port, idx)
        v = self.vcs.get(key)
        if v is None:
            v = self.vcs[key] = _Vc()
        return v

    def credit(self, node: NodeId, out_dir: Direction, idx: int) -> int:
        return self.credits.setdefault((node, out_dir, idx), self.params.buffer_depth)

    def assign_path(self, pkt: _Packet) -> None:
        if self.alg == "mad":
            return
        if self.alg == "dor":
            path = baseline_path("dor", pkt.src, pkt.dst)
        elif self.alg == "xyyx":
            path = baseline_path("xyyx", pkt.src, pkt.dst, parity=self.cycle)
        else:
            path = baseline_path("romm", pkt.src, pkt.dst, rng=self.rng)
        pkt.next_hop = {a: b for a, b in zip(path, path[1:])}

    def wanted_dir(self, pkt: _Packet, node: NodeId) -> Direction:
        if pkt.escaped:
            return _dor_next(node, pkt.dst)
        if self.alg == "mad":
            dirs = _minimal_dirs(node, pkt.dst)
            if not dirs:
                return Direction.OUTPUT
            if len(dirs) == 1:
                return dirs[0]

            def free_credit(d: Direction) -> int:
                return sum(self.credit(node, d, v) for v in self.params.main_vcs)

            best = max(free_credit(d) for d in dirs)
            tied = [d for d in dirs if free_credit(d) == best]
            for d in tied:  # prefer the X dimension on ties
                if d in (Direction.EAST, Direction.WEST):
                    return d
            return tied[0]
        nxt = pkt.next_hop.get(node)
        return Direction.OUTPUT if nxt is None else direction_between(node, nxt)

    def try_allocate(self, node: NodeId, pkt: _Packet, want: Direction) -> Optional[tuple[Direction, int]]:
        """Reserve a downstream VC for a head; may divert onto the escape."""
        params = self.params
        down = node.step(want)
        down_port = want.opposite
        if pkt.escaped:
            esc = params.escape_vc
            assert esc is not None
            v = self.vc(down, down_port, esc)
            if v.owner is None and not v.fifo:
                v.owner = pkt.uid
                return want, esc
            return None
        rr_key = (node, want)
        mains = params.main_vcs
        start = self.vc_rr.get(rr_key, 0) % len(mains)
        for offset in range(len(mains)):
            idx = mains[(start + offset) % len(mains)]
            v = self.vc(down, down_port, idx)
            if v.owner is None and not v.fifo:
                v.owner = pkt.uid
                self.vc_rr[rr_key] = (start + offset + 1) % len(mains)
                return want, idx
        esc = params.escape_vc
        if esc is None:
            return None
        # Every main VC is taken: divert to the escape network under DOR.
        dor_dir = _dor_next(node, pkt.dst)
        down = node.step(dor_dir)
        v = self.vc(down, dor_dir.opposite, esc)
        if v.owner is None and not v.fifo:
            v.owner = pkt.uid
            pkt.escaped = True
            return dor_dir, esc
        return None

    # -- per-cycle phases ----------------------------------------------

    def do_injection(self) -> bool:
        moved = False
        for node in sorted(self.active, key=lambda n: (n.y, n.x)):
            state = self.inject_state.get(node)
            queue = self.queues.get(node)
            if state is None:
                if not queue or queue[0].ready > self.cycle:
                    continue
                pkt = queue[0]
                mains = self.params.main_vcs
                rr_key = (node, Direction.OUTPUT)
                start = self.vc_rr.get(rr_key, 0) % len(mains)
                chosen = None
                for offset in range(len(mains)):
                    idx = mains[(start + offset) % len(mains)]
                    v = self.vc(node, Direction.OUTPUT, idx)
                    if v.owner is None and not v.fifo:
                        chosen = idx
                        v.owner = pkt.uid
                        self.vc_rr[rr_key] = (start + offset + 1) % len(mains)
                        break
                if chosen is None:
                    self.blocked_events += 1
                    continue
                queue.popleft()
                self.assign_path(pkt)
                self.inject_seen.setdefault(pkt.flow_id, self.cycle)
                state = (pkt, 0, chosen)
                self.inject_state[node] = state
            pkt, seq, vc_idx = state
            if self.params.mc_bits_per_cycle is not None and node in self.mesh.mc_nodes:
                if self.cycle < self.next_inject_ok.get(node, 0):
                    continue
            v = self.vc(node, Direction.OUTPUT, vc_idx)
            if len(v.fifo) >= self.params.buffer_depth:
                self.blocked_events += 1
                continue
            v.fifo.append([pkt, seq, self.cycle])
            self.flits_in_network += 1
            self.last_injection_cycle = self.cycle
            moved = True
            if self.params.mc_bits_per_cycle is not None and node in self.mesh.mc_nodes:
                spacing = -(-self.mesh.wire_width // self.params.mc_bits_per_cycle)
                self.next_inject_ok[node] = self.cycle + spacing
            if seq + 1 == pkt.flits:
                self.inject_state[node] = None
            else:
                self.inject_state[node] = (pkt, seq + 1, vc_idx)
        return moved

    def route_heads(self) -> None:
        """Route computation and VC allocation for parked head flits."""
        for node in sorted(self.active, key=lambda n: (n.y, n.x)):
            for port in _IN_PORTS:
                for idx in range(self.params.vcs):
                    v = self.vcs.get((node, port, idx))
                    if v is None or not v.fifo or v.out_dir is not None:
                        continue
                    pkt, seq, arrive = v.fifo[0]
                    if seq != 0:
                        raise SimulationError("body flit at an unrouted VC head")
                    if arrive + self._charge(node, pkt) > self.cycle:
                        continue
                    want = self.wanted_dir(pkt, node)
                    if want is Direction.OUTPUT:
                        v.out_dir = Direction.OUTPUT
                        v.out_vc = None
                        continue
                    got = self.try_allocate(node, pkt, want)
                    if got is None:
                        self.blocked_events += 1
                        self.last_full[(node, want)] = self.cycle
                        continue
                    v.out_dir, v.out_vc = got

    def _charge(self, node: NodeId, pkt: _Packet) -> int:
        return 1 if node == pkt.dst else self.params.router_cycles

    def do_switch(self) -> bool:
        moved = False
        for node in sorted(self.active, key=lambda n: (n.y, n.x)):
            for out_dir in (Direction.OUTPUT,) + _MESH_OUT:
                ready = []
                for p_idx, port in enumerate(_IN_PORTS):
                    for idx in range(self.params.vcs):
                        v = self.vcs.get((node, port, idx))
                        if v is None or not v.fifo or v.out_dir is not out_dir:
                            continue
                        pkt, seq, arrive = v.fifo[0]
                        if arrive + self._charge(node, pkt) > self.cycle:
                            continue
                        if out_dir is not Direction.OUTPUT and self.credit(node, out_dir, v.out_vc) <= 0:
                            self.blocked_events += 1
                            self.last_full[(node, out_dir)] = self.cycle
                            continue
                        ready.append((p_idx * self.params.vcs + idx, port, idx, v, pkt, seq))
                if not ready:
                    continue
                self.blocked_events += len(ready) - 1  # arbitration losses
                pointer = self.sw_rr.get((node, out_dir), 0)
                span = len(_IN_PORTS) * self.params.vcs
                ready.sort(key=lambda r: (r[0] - pointer) % span)
                rank, port, idx, v, pkt, seq = ready[0]
                self.sw_rr[(node, out_dir)] = (rank + 1) % span
                v.fifo.popleft()
                moved = True
                is_tail = seq == pkt.flits - 1
                if port is not Direction.OUTPUT:
                    upstream = node.step(port)
                    self.credit_events.setdefault(self.cycle + 1, []).append(
                        (upstream, port.opposite, idx)
                    )
                if out_dir is Direction.OUTPUT:
                    self.delivered_flits += 1
                    self.flits_in_network -= 1
                    if seq == 0:
                        self.head_seen.setdefault(pkt.flow_id, self.cycle)
                    if is_tail:
                        self.copy_tail[(pkt.flow_id, pkt.copy)] = max(
                            self.copy_tail.get((pkt.flow_id, pkt.copy), 0), self.cycle
                        )
                        v.owner = None
                        v.out_dir = None
                        v.out_vc = None
                else:
                    nxt = node.step(out_dir)
                    ch = ChannelId(node, nxt)
                    self.channel_busy[ch] = self.channel_busy.get(ch, 0) + 1
                    remaining = self.credit(node, out_dir, v.out_vc) - 1
                    if remaining < 0:
                        raise SimulationError(f"negative credit at {node} {out_dir.name}")
                    self.credits[(node, out_dir, v.out_vc)] = remaining
                    self.arrivals.setdefault(self.cycle + self.params.wire_cycles, []).append(
                        (nxt, out_dir.opposite, v.out_vc, [pkt, seq, self.cycle + self.params.wire_cycles])
                    )
                    self.active.add(nxt)
                    if is_tail:
                        v.owner = None
                        v.out_dir = None
                        v.out_vc = None
        return moved

    def full_channels(self, window: Optional[int] = None) -> frozenset[ChannelId]:
        """Channels that stalled a ready flit (exhausted credits or no
        allocatable VC) within the last `window` cycles."""
        if window is None:
            window = self.probe_interval
        out = set()
        for (node, out_dir), when in self.last_full.items():
            if self.cycle - when <= window:
                nxt = node.step(out_dir)
                if self.mesh.contains(nxt):
                    out.add(ChannelId(node, nxt))
        return frozenset(out)

    def prune_active(self) -> None:
        keep: set[NodeId] = set()
        for (node, _, _), v in self.vcs.items():
            if v.fifo:
                keep.add(node)
        for node, queue in self.queues.items():
            if queue:
                keep.add(node)
        for node, state in self.inject_state.items():
            if state is not None:
                keep.add(node)
        for entries in self.arrivals.values():
            for node, _, _, _ in entries:
                keep.add(node)
        self.active = keep

    def next_ready_cycle(self) -> Optional[int]:
        ready = [q[0].ready for q in self.queues.values() if q]
        return min(ready) if ready else None

    def run(self) -> SimResult:
        params = self.params
        idle = 0
        guard = params.deadlock_budget * 50
        while self.delivered_flits < self.total_flits:
            for node, out_dir, idx in self.credit_events.pop(self.cycle, ()):
                restored = self.credit(node, out_dir, idx) + 1
                if restored > params.buffer_depth:
                    raise SimulationError(f"credit overflow at {node} {out_dir.name}")
                self.credits[(node, out_dir, idx)] = restored
            for node, port, idx, entry in self.arrivals.pop(self.cycle, ()):
                self.vc(node, port, idx).fifo.append(entry)
                self.active.add(node)

            moved = self.do_injection()
            self.route_heads()
            moved = self.do_switch() or moved

            if self.probe is not None and self.cycle % self.probe_interval == 0:
                self.probe(self.cycle, self.full_channels())

            if moved:
                idle = 0
            else:
                if self.flits_in_network == 0 and not self.arrivals:
                    nxt = self.next_ready_cycle()
                    if nxt is not None and nxt > self.cycle:
                        pending_events = list(self.credit_events) or [nxt]
                        self.cycle = max(self.cycle + 1, min(nxt, min(pending_events)))
                        continue
                idle += 1
                if idle > params.deadlock_budget:
                    raise DeadlockDetected(
                        f"{self.total_flits - self.delivered_flits} flits stuck "
                        f"after {params.deadlock_budget} idle cycles"
                    )
            self.cycle += 1
            if self.cycle > guard:
                raise SimulationError("simulation exceeded its cycle guard")
            if self.cycle % 4096 == 0:
                self.prune_active()

        return self._result()

    def _result(self) -> SimResult:
        flows_by_id = {f.id: f for f in self.flows}
        node_arrivals: dict[int, dict[NodeId, int]] = {}
        for (flow_id, copy), tail in self.copy_tail.items():
            node = copy_terminal(flows_by_id[flow_id], copy)
            per = node_arrivals.setdefault(flow_id, {})
            per[node] = max(per.get(node, 0), tail)
        timings = {}
        for flow_id, nodes in sorted(node_arrivals.items()):
            flow = flows_by_id[flow_id]
            timings[flow_id] = FlowTiming(
                flow_id=flow_id,
                injection=self.inject_seen.get(flow_id, flow.ready_time * self.cycles_per_slot),
                head_arrival=self.head_seen.get(flow_id, 0),
                tail_arrival=max(nodes.values()),
                node_arrival=dict(nodes),
            )
        return SimResult(
            unit="cycle",
            flows=timings,
            channel_busy=self.channel_busy,
            makespan=max((t.tail_arrival for t in timings.values()), default=0),
            blocked_flit_events=self.blocked_events,
            cycles_per_slot=self.cycles_per_slot,
            last_injection_cycle=self.last_injection_cycle,
        )


def simulate_baseline(
    flows: Sequence[TrafficFlow],
    mesh: MeshTopology,
    alg: str = "dor",
    params: NocParams = NocParams(),
    packet_payload_flits: int = 8,
    cycles_per_slot: int = 3,
    seed: int = 0,
    probe: Optional[Callable[[int, frozenset[ChannelId]], None]] = None,
    probe_interval: int = 64,
) -> SimResult:
    """Run a flow set through the contending VC network.

    Collectives are lowered to per-terminal unicast copies and split into
    packets of `packet_payload_flits` payload flits plus one header flit.
    Flow ready times, given in slots, are scaled by `cycles_per_slot` onto
    the cycle clock. `probe` receives, every probe_interval cycles, the
    set of channels whose downstream buffers are exhausted.
    """
    alg = alg.lower()
    if alg not in BASELINE_ALGS:
        raise ValidationError(f"unknown baseline algorithm {alg!r}")
    sim = _BaselineSim(
        flows, mesh, alg, params, packet_payload_flits, cycles_per_slot, seed,
        probe, probe_interval,
    )
    return sim.run()
