"""Slot-based injection control.

Time is divided into fixed slots, one flit crossing one channel per slot.
Every channel a flow passes is reserved for the flow's whole serialized
length, staggered by the per-hop slot cost, so a flow admitted by the
scheduler traverses the network without meeting any occupied channel.

Slot bookkeeping convention: a transmission injected at slot t occupies
its h-th path channel over [t + (h-1)*S_c, t + (h-1)*S_c + S_ser), and a
consumer at total hop depth D has the flow fully delivered by slot
t + D*S_c + S_ser.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .core import (
    ChannelId,
    MeshTopology,
    NodeId,
    SlotIndex,
    TrafficFlow,
    ValidationError,
    channels_of_path,
    eject_port,
    flit_count,
    inject_port,
)
from .hwconfig import Framing
from .routing import RoutePlan, Transmission, plan_transmissions


def flow_latency(hops: int, slot_per_hop: int, volume: int, flit_bits: int) -> int:
    """End-to-end slots for an uncontended flow: traversal plus serialization."""
    if hops < 0 or slot_per_hop < 1:
        raise ValidationError("need hops >= 0 and slot_per_hop >= 1")
    return hops * slot_per_hop + flit_count(volume, flit_bits)


@dataclass(frozen=True)
class Interval:
    start: SlotIndex
    end: SlotIndex
    flow_id: int
    tx_key: str


class ReservationTimeline:
    """Per-channel sorted reservation intervals, half-open [start, end)."""

    def __init__(self) -> None:
        self._channels: dict[ChannelId, list[Interval]] = {}
        self._starts: dict[ChannelId, list[int]] = {}

    def channels(self) -> Iterable[ChannelId]:
        return self._channels.keys()

    def intervals(self, channel: ChannelId) -> list[Interval]:
        return list(self._channels.get(channel, ()))

    def conflicts(self, channel: ChannelId, start: int, end: int) -> bool:
        intervals = self._channels.get(channel)
        if not intervals:
            return False
        starts = self._starts[channel]
        idx = bisect.bisect_right(starts, start)
        if idx < len(intervals) and intervals[idx].start < end:
            return True
        return idx > 0 and intervals[idx - 1].end > start

    def reserve(self, channel: ChannelId, interval: Interval, check: bool = True) -> None:
        if check and self.conflicts(channel, interval.start, interval.end):
            raise ValidationError(f"overlapping reservation on {channel}")
        intervals = self._channels.setdefault(channel, [])
        starts = self._starts.setdefault(channel, [])
        idx = bisect.bisect_right(starts, interval.start)
        intervals.insert(idx, interval)
        starts.insert(idx, interval.start)


def transmission_offsets(
    tx: Transmission, s_c: int
) -> list[tuple[ChannelId, int, int]]:
    """Relative occupancy windows of one transmission injected at slot 0.

    Each entry is (channel, start_offset, serialization_multiplier_end)
    where the absolute window at injection slot t is
    [t + start, t + start + S_ser). Includes the source's injection port
    and every consumer's ejection port.
    """
    out: list[tuple[ChannelId, int, int]] = []
    path_channels = channels_of_path(tx.path)
    hops = len(path_channels)
    out.append((inject_port(tx.source), 0, 0))
    for h, channel in enumerate(path_channels, start=1):
        out.append((channel, (h - 1) * s_c, 0))
    if tx.tree is not None:
        for channel in tx.tree.edges():
            depth = tx.tree.depth[channel.dst]
            out.append((channel, (hops + depth - 1) * s_c, 0))
        for consumer in tx.consumers:
            depth = tx.tree.depth[consumer]
            out.append((eject_port(consumer), (hops + depth) * s_c, 0))
    else:
        out.append((eject_port(tx.path[-1]), hops * s_c, 0))
    return out


def transmission_occupancy(
    tx: Transmission, inject_at: SlotIndex, s_c: int, s_ser: int
) -> dict[ChannelId, list[tuple[int, int]]]:
    """Absolute per-channel occupancy of a transmission injected at a slot."""
    occ: dict[ChannelId, list[tuple[int, int]]] = {}
    for channel, start, _ in transmission_offsets(tx, s_c):
        occ.setdefault(channel, []).append((inject_at + start, inject_at + start + s_ser))
    return occ


def transmission_completion(tx: Transmission, inject_at: SlotIndex, s_c: int, s_ser: int) -> int:
    """Slot by which every consumer holds the whole transmission."""
    hops = len(tx.path) - 1
    depth = tx.tree.max_depth if tx.tree is not None else 0
    return inject_at + (hops + depth) * s_c + s_ser


def consumer_completions(
    tx: Transmission, inject_at: SlotIndex, s_c: int, s_ser: int
) -> dict[NodeId, int]:
    hops = len(tx.path) - 1
    out = {}
    for consumer in tx.consumers:
        depth = tx.tree.depth[consumer] if tx.tree is not None else 0
        out[consumer] = inject_at + (hops + depth) * s_c + s_ser
    return out


def occupancy(
    plan: RoutePlan, inject_at: SlotIndex, s_c: int, s_ser: int
) -> dict[ChannelId, list[tuple[int, int]]]:
    """Occupancy of a single-injection plan (unicast or multicast).

    Reduce plans inject their gather legs independently; use the
    per-transmission API for those.
    """
    txs = plan_transmissions(plan)
    if len(txs) != 1:
        raise ValidationError("occupancy() needs a single-injection plan")
    return transmission_occupancy(txs[0], inject_at, s_c, s_ser)


def earliest_feasible_injection(
    tx: Transmission,
    timeline: ReservationTimeline,
    ready: SlotIndex,
    s_c: int,
    s_ser: int,
) -> SlotIndex:
    """Smallest slot >= ready at which the transmission meets no reservation.

    Only release boundaries of existing reservations can end a conflict,
    so scanning {ready} plus those boundaries is exact.
    """
    offsets = transmission_offsets(tx, s_c)

    def feasible(t: int) -> bool:
        return not any(
            timeline.conflicts(channel, t + start, t + start + s_ser)
            for channel, start, _ in offsets
        )

    candidates = {ready}
    for channel, start, _ in offsets:
        for interval in timeline.intervals(channel):
            t = interval.end - start
            if t > ready:
                candidates.add(t)
    for t in sorted(candidates):
        if t >= ready and feasible(t):
            return t
    raise AssertionError("a feasible slot always exists past the last release")


@dataclass
class ScheduledTransmission:
    tx: Transmission
    s_ser: int
    inject_slot: SlotIndex
    completion_slot: SlotIndex
    consumer_completion: dict[NodeId, int]


@dataclass
class FlowSchedule:
    flow: TrafficFlow
    transmissions: list[ScheduledTransmission]

    @property
    def injection_slot(self) -> SlotIndex:
        return min(st.inject_slot for st in self.transmissions)

    @property
    def completion_slot(self) -> SlotIndex:
        return max(st.completion_slot for st in self.transmissions)

    @property
    def lateness(self) -> int:
        return self.completion_slot - self.flow.qos_deadline

    def arrival_at(self, node: NodeId) -> SlotIndex:
        """Slot by which this flow's data is fully resident at a consumer."""
        slots = [
            st.consumer_completion[node]
            for st in self.transmissions
            if node in st.consumer_completion
        ]
        if not slots:
            raise KeyError(f"{node} consumes nothing of flow {self.flow.id}")
        return max(slots)

    def occupancy(self, s_c: int) -> dict[ChannelId, list[tuple[int, int]]]:
        occ: dict[ChannelId, list[tuple[int, int]]] = {}
        for st in self.transmissions:
            for ch, spans in transmission_occupancy(st.tx, st.inject_slot, s_c, st.s_ser).items():
                occ.setdefault(ch, []).extend(spans)
        return occ


@dataclass
class InjectionSchedule:
    flows: dict[int, FlowSchedule]
    timeline: ReservationTimeline
    slot_per_hop: int

    @property
    def makespan(self) -> SlotIndex:
        if not self.flows:
            return 0
        return max(fs.completion_slot for fs in self.flows.values())

    def late_flows(self) -> list[int]:
        return sorted(fid for fid, fs in self.flows.items() if fs.lateness > 0)


FlitsFor = Callable[[TrafficFlow, Transmission], int]


def chunk_flits_for(mesh: MeshTopology, framing: Framing = Framing()) -> FlitsFor:
    """Default framing: per-transmission wire flits under the given policy."""

    def flits(flow: TrafficFlow, tx: Transmission) -> int:
        route_entries = max(1, len(tx.path))  # hops + terminator
        return framing.wire_flits(flow.volume, mesh.wire_width, route_entries)

    return flits


def schedule(
    flows: Sequence[TrafficFlow],
    plans: dict[int, RoutePlan],
    mesh: MeshTopology,
    flits_for: Optional[FlitsFor] = None,
    order: Optional[Sequence[int]] = None,
) -> InjectionSchedule:
    """Greedy earliest-deadline injection scheduling.

    Flows are admitted in (qos_deadline, ready_time, id) order; each
    transmission takes the earliest slot at which all its channels are
    free, so flows with disjoint channel sets inject concurrently. A
    reduce flow's fan-out leg waits for its last gather leg. Lateness is
    recorded, never an error.
    """
    if flits_for is None:
        flits_for = chunk_flits_for(mesh)
    by_id = {flow.id: flow for flow in flows}
    if order is None:
        order = [
            f.id
            for f in sorted(flows, key=lambda f: (f.qos_deadline, f.ready_time, f.id))
        ]
    timeline = ReservationTimeline()
    s_c = mesh.channel_slot_cost
    scheduled: dict[int, FlowSchedule] = {}

    for flow_id in order:
        flow = by_id[flow_id]
        plan = plans[flow_id]
        stxs: list[ScheduledTransmission] = []
        gather_done = flow.ready_time
        for tx in plan_transmissions(plan):
            s_ser = flits_for(flow, tx)
            ready = flow.ready_time if not tx.after_gather else gather_done
            inject = earliest_feasible_injection(tx, timeline, ready, s_c, s_ser)
            for channel, start, _ in transmission_offsets(tx, s_c):
                timeline.reserve(
                    channel,
                    Interval(inject + start, inject + start + s_ser, flow_id, tx.key),
                )
            completion = transmission_completion(tx, inject, s_c, s_ser)
            if not tx.after_gather:
                gather_done = max(gather_done, completion)
            stxs.append(
                ScheduledTransmission(
                    tx=tx,
                    s_ser=s_ser,
                    inject_slot=inject,
                    completion_slot=completion,
                    consumer_completion=consumer_completions(tx, inject, s_c, s_ser),
                )
            )
        scheduled[flow_id] = FlowSchedule(flow=flow, transmissions=stxs)

    return InjectionSchedule(flows=scheduled, timeline=timeline, slot_per_hop=s_c)


@dataclass(frozen=True)
class Conflict:
    channel: ChannelId
    first: Interval
    second: Interval


def verify_schedule(sched: InjectionSchedule) -> list[Conflict]:
    """All pairs of overlapping reservations; empty iff contention-free."""
    conflicts = []
    for channel in sorted(sched.timeline.channels(), key=_channel_sort_key):
        intervals = sched.timeline.intervals(channel)
        for a, b in zip(intervals, intervals[1:]):
            if b.start < a.end:
                conflicts.append(Conflict(channel, a, b))
    return conflicts


def _channel_sort_key(channel: ChannelId):
    return (channel.src.y, channel.src.x, channel.dst.y, channel.dst.x, channel.kind.value)
