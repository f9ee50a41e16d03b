"""Tile-side double-buffer pipeline accounting.

Turns per-flow delivery times into per-tile compute and stall totals: an
iteration's compute starts once the previous iteration ended, its
prefetched weights and inputs have fully arrived, and the partial-sum
reduce two iterations back has drained the output buffers. The same
machinery with instant arrivals yields the zero-communication ideal used
as the normalization baseline.

A tile's bounded ratio is its summed per-window communication demand over
its total compute time, where one window is one compute period and
concurrent flows count by their slowest member: the ratio stays at or
below 1 exactly when every window's traffic fits its compute period.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from ..core import NodeId, ValidationError
from ..workload import CommunicationGraph, FlowRecord, Provenance


@dataclass
class TileAccount:
    tile: NodeId
    layer: str
    compute_units: int
    stall_units: int
    comm_units: int
    bounded_ratio: float


@dataclass
class TileSimResult:
    unit: str
    tiles: dict[NodeId, TileAccount]
    layer_finish: dict[str, int]
    makespan: int

    @property
    def mean_bounded_ratio(self) -> float:
        if not self.tiles:
            return 0.0
        return sum(t.bounded_ratio for t in self.tiles.values()) / len(self.tiles)

    @property
    def max_bounded_ratio(self) -> float:
        if not self.tiles:
            return 0.0
        return max(t.bounded_ratio for t in self.tiles.values())

    @property
    def total_stall(self) -> int:
        return sum(t.stall_units for t in self.tiles.values())


Arrivals = Mapping[int, Mapping[NodeId, int]]


def instant_arrivals(graph: CommunicationGraph, scale: int = 1) -> dict[int, dict[NodeId, int]]:
    """Idealized arrivals: every flow lands the moment it is ready."""
    out: dict[int, dict[NodeId, int]] = {}
    for record in graph.records:
        flow = record.flow
        nodes = set(flow.destinations)
        out[flow.id] = {node: flow.ready_time * scale for node in nodes}
    return out


def simulate_tiles(
    graph: CommunicationGraph,
    arrivals: Arrivals,
    scale: int = 1,
    unit: str = "slot",
) -> TileSimResult:
    """Replay the compute pipeline of every layer against flow arrivals.

    `arrivals` maps flow id to per-consumer tail-delivery times in the
    target unit; `scale` converts workload slots into that unit (1 for
    slots, cycles-per-slot for cycle-based simulators).
    """
    tiles: dict[NodeId, TileAccount] = {}
    layer_finish: dict[str, int] = {}
    makespan = 0

    by_layer: dict[str, dict[int, dict[Provenance, FlowRecord]]] = {}
    spills: dict[str, FlowRecord] = {}
    for record in graph.records:
        if record.provenance is Provenance.OUTPUT_SPILL:
            spills[record.layer] = record
        else:
            by_layer.setdefault(record.layer, {}).setdefault(record.iteration, {})[
                record.provenance
            ] = record

    def arrival_at(record: FlowRecord, node: NodeId) -> int:
        per_node = arrivals.get(record.flow.id)
        if per_node is None or node not in per_node:
            raise ValidationError(f"flow {record.flow.id} has no arrival at {node}")
        return per_node[node]

    def latency(record: FlowRecord, node: NodeId) -> int:
        return max(0, arrival_at(record, node) - record.flow.ready_time * scale)

    for layer in graph.workload.layers:
        period = layer.compute_slots_per_iteration * scale
        iters = layer.iterations
        per_iter = by_layer.get(layer.name, {})
        region = layer.layer_region
        reduction = layer.reduction_tile

        end_prev = {tile: 0 for tile in region}
        stall = {tile: 0 for tile in region}
        comm = {tile: 0 for tile in region}
        reduce_done: dict[int, int] = {}
        layer_end = 0

        def reduce_record(i: int):
            return per_iter.get(i, {}).get(Provenance.PSUM_REDUCE)

        for i in range(iters):
            records = per_iter.get(i, {})
            gate = reduce_done.get(i - 2, 0)
            prefetch = [
                records[p]
                for p in (Provenance.WEIGHTS, Provenance.INPUTS, Provenance.INTER_LAYER)
                if p in records
            ]
            for tile in region:
                window = [latency(r, tile) for r in prefetch]
                data_ready = max(
                    [gate] + [arrival_at(r, tile) for r in prefetch], default=0
                )
                if tile == reduction:
                    folded = reduce_record(i - 2)
                    if folded is not None:
                        window.append(latency(folded, reduction))
                    if i == iters - 1:
                        for j in (iters - 2, iters - 1):
                            trailing = reduce_record(j) if j >= 0 else None
                            if trailing is not None:
                                window.append(latency(trailing, reduction))
                        spill = spills.get(layer.name)
                        if spill is not None:
                            window.append(latency(spill, spill.flow.destination))
                comm[tile] += max(window, default=0)
                start = max(end_prev[tile], data_ready)
                stall[tile] += start - end_prev[tile]
                end_prev[tile] = start + period
                layer_end = max(layer_end, end_prev[tile])
            record = reduce_record(i)
            if record is not None:
                done = arrival_at(record, record.flow.destination)
                reduce_done[i] = done
                layer_end = max(layer_end, done)

        spill = spills.get(layer.name)
        if spill is not None:
            layer_end = max(layer_end, arrival_at(spill, spill.flow.destination))

        compute_total = iters * period
        for tile in region:
            tiles[tile] = TileAccount(
                tile=tile,
                layer=layer.name,
                compute_units=compute_total,
                stall_units=stall[tile],
                comm_units=comm[tile],
                bounded_ratio=comm[tile] / compute_total,
            )
        layer_finish[layer.name] = layer_end
        makespan = max(makespan, layer_end)

    return TileSimResult(unit=unit, tiles=tiles, layer_finish=layer_finish, makespan=makespan)
