"""Workload descriptions and deterministic traffic-flow extraction.

A layer's compute is modelled at iteration granularity: iteration i of a
layer nominally computes during slots [(i+1)*C, (i+2)*C) where C is the
layer's compute_slots_per_iteration. The slot window [i*C, (i+1)*C) is the
double-buffer prefetch window for iteration i, which fixes every flow's
ready time and QoS deadline.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .core import (
    MeshTopology,
    NodeId,
    PatternKind,
    SlotIndex,
    TrafficFlow,
    ValidationError,
    manhattan,
)
from .hilbert import hilbert_order


class CapacityExceeded(ValidationError):
    """More tiles demanded than the mesh provides."""


class DanglingUpstream(ValidationError):
    """A layer names an unknown upstream layer."""


class Provenance(Enum):
    WEIGHTS = "weights"
    INPUTS = "inputs"
    PSUM_REDUCE = "psum_reduce"
    OUTPUT_SPILL = "output_spill"
    INTER_LAYER = "inter_layer"


@dataclass(frozen=True)
class LayerSpec:
    """One DNN layer mapped to a consecutive tile region."""

    name: str
    tile_count: int
    weight_tile_bits: int
    input_tile_bits: int
    output_tile_bits: int
    iterations: int
    compute_slots_per_iteration: int
    layer_region: tuple[NodeId, ...] = ()
    reduction_tile: Optional[NodeId] = None
    upstream: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_region", tuple(self.layer_region))
        if self.tile_count < 1:
            raise CapacityExceeded(f"layer {self.name}: tile_count must be >= 1")
        for label, bits in (
            ("weight_tile_bits", self.weight_tile_bits),
            ("input_tile_bits", self.input_tile_bits),
            ("output_tile_bits", self.output_tile_bits),
        ):
            if bits <= 0:
                raise ValidationError(f"layer {self.name}: {label} must be positive")
        if self.iterations < 1:
            raise ValidationError(f"layer {self.name}: iterations must be >= 1")
        if self.compute_slots_per_iteration < 1:
            raise ValidationError(f"layer {self.name}: compute slots must be >= 1")
        if self.layer_region:
            if len(set(self.layer_region)) != len(self.layer_region):
                raise ValidationError(f"layer {self.name}: duplicate region tiles")
            if len(self.layer_region) != self.tile_count:
                raise ValidationError(f"layer {self.name}: region size != tile_count")
            if self.reduction_tile is not None and self.reduction_tile not in self.layer_region:
                raise ValidationError(f"layer {self.name}: reduction tile outside region")

    @property
    def placed(self) -> bool:
        return bool(self.layer_region)


@dataclass(frozen=True)
class WorkloadSpec:
    """A mesh plus the layers mapped onto it."""

    mesh: MeshTopology
    layers: tuple[LayerSpec, ...]
    mc_assignment: dict[str, NodeId] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate layer names")

    def validate_placed(self) -> None:
        """Check region disjointness and reference integrity after placement."""
        names = {layer.name for layer in self.layers}
        claimed: dict[NodeId, str] = {}
        for layer in self.layers:
            if not layer.placed:
                raise ValidationError(f"layer {layer.name} has no region")
            if layer.reduction_tile is None:
                raise ValidationError(f"layer {layer.name} has no reduction tile")
            if layer.upstream is not None and layer.upstream not in names:
                raise DanglingUpstream(
                    f"layer {layer.name} names unknown upstream {layer.upstream!r}"
                )
            for tile in layer.layer_region:
                if not self.mesh.contains(tile):
                    raise ValidationError(f"layer {layer.name}: tile {tile} outside mesh")
                if tile in claimed:
                    raise ValidationError(
                        f"tile {tile} assigned to both {claimed[tile]} and {layer.name}"
                    )
                claimed[tile] = layer.name
        for name, mc in self.mc_assignment.items():
            if name not in names:
                raise ValidationError(f"mc_assignment names unknown layer {name!r}")
            if mc not in self.mesh.mc_nodes:
                raise ValidationError(f"{mc} is not a memory controller")

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


@dataclass(frozen=True)
class FlowRecord:
    """One extracted flow together with its provenance."""

    flow: TrafficFlow
    layer: str
    iteration: int
    provenance: Provenance


@dataclass(frozen=True)
class CommunicationGraph:
    """All traffic flows of a workload, ordered by ready time."""

    workload: WorkloadSpec
    records: tuple[FlowRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def flows(self) -> list[TrafficFlow]:
        return [r.flow for r in self.records]

    def record(self, flow_id: int) -> FlowRecord:
        return self._by_id()[flow_id]

    def _by_id(self) -> dict[int, FlowRecord]:
        return {r.flow.id: r for r in self.records}


def place_regions(workload: WorkloadSpec) -> WorkloadSpec:
    """Assign each unplaced layer a consecutive run of Hilbert-curve tiles.

    Tiles claimed by explicitly placed layers are skipped. Unplaced layers
    also receive a reduction tile (the first tile of their run).
    """
    demanded = sum(l.tile_count for l in workload.layers)
    if demanded > workload.mesh.size:
        raise CapacityExceeded(
            f"{demanded} tiles demanded on a {workload.mesh.size}-tile mesh"
        )
    claimed = {t for l in workload.layers if l.placed for t in l.layer_region}
    curve = [n for n in hilbert_order(workload.mesh) if n not in claimed]
    cursor = 0
    placed_layers = []
    for layer in workload.layers:
        if layer.placed:
            if layer.reduction_tile is None:
                layer = replace(layer, reduction_tile=layer.layer_region[0])
            placed_layers.append(layer)
            continue
        if cursor + layer.tile_count > len(curve):
            raise CapacityExceeded(f"no room left for layer {layer.name}")
        region = tuple(curve[cursor : cursor + layer.tile_count])
        cursor += layer.tile_count
        placed_layers.append(
            replace(layer, layer_region=region, reduction_tile=region[0])
        )
    placed = WorkloadSpec(workload.mesh, tuple(placed_layers), dict(workload.mc_assignment))
    placed.validate_placed()
    return placed


def nearest_mc(mesh: MeshTopology, region: tuple[NodeId, ...]) -> NodeId:
    """Memory controller closest to the region; ties keep mc_nodes order."""
    if not mesh.mc_nodes:
        raise ValidationError("workload needs at least one memory controller")
    return min(mesh.mc_nodes, key=lambda mc: min(manhattan(mc, t) for t in region))


def assigned_mc(workload: WorkloadSpec, layer: LayerSpec) -> NodeId:
    mc = workload.mc_assignment.get(layer.name)
    if mc is not None:
        return mc
    return nearest_mc(workload.mesh, layer.layer_region)


def _pattern_kind(sources: tuple[NodeId, ...], destinations: tuple[NodeId, ...], collective: PatternKind) -> PatternKind:
    if len(sources) == 1 and len(destinations) == 1:
        return PatternKind.UNICAST
    return collective


def extract_flows(workload: WorkloadSpec) -> CommunicationGraph:
    """Derive the complete flow set of a placed workload.

    Per layer and iteration i: a weights multicast and an inputs multicast
    ready one compute period ahead of the iteration that consumes them,
    and a partial-sum reduce whose delivery window is the following
    iteration's compute. A final spill unicast returns the accumulated
    output to memory when no on-chip layer consumes it.
    """
    workload.validate_placed()
    consumed_by = {l.upstream for l in workload.layers if l.upstream is not None}
    drafts: list[tuple[int, int, int, FlowRecord]] = []

    for layer_idx, layer in enumerate(workload.layers):
        region = layer.layer_region
        period = layer.compute_slots_per_iteration
        reduction = layer.reduction_tile
        assert reduction is not None
        mc = assigned_mc(workload, layer)
        # Weight/input multicast volume is scaled by the region size: each
        # tile's slice is distinct, so the pattern carries the aggregate.
        weights_volume = layer.weight_tile_bits * layer.tile_count
        inputs_volume = layer.input_tile_bits * layer.tile_count

        if layer.upstream is None:
            input_source = mc
            input_provenance = Provenance.INPUTS
        else:
            upstream = workload.layer(layer.upstream)
            if upstream.reduction_tile is None:
                raise ValidationError(f"upstream {upstream.name} not placed")
            input_source = upstream.reduction_tile
            input_provenance = Provenance.INTER_LAYER

        for i in range(layer.iterations):
            ready = i * period
            deadline = (i + 1) * period
            drafts.append(
                (
                    layer_idx,
                    i,
                    0,
                    FlowRecord(
                        flow=_make_flow(
                            PatternKind.MULTICAST, weights_volume, (mc,), region, ready, deadline
                        ),
                        layer=layer.name,
                        iteration=i,
                        provenance=Provenance.WEIGHTS,
                    ),
                )
            )
            drafts.append(
                (
                    layer_idx,
                    i,
                    1,
                    FlowRecord(
                        flow=_make_flow(
                            PatternKind.MULTICAST,
                            inputs_volume,
                            (input_source,),
                            region,
                            ready,
                            deadline,
                        ),
                        layer=layer.name,
                        iteration=i,
                        provenance=input_provenance,
                    ),
                )
            )
            # The reduction tile accumulates its own partial locally, so it
            # is not a reduce source.
            reduce_sources = tuple(t for t in region if t != reduction)
            if reduce_sources:
                drafts.append(
                    (
                        layer_idx,
                        i,
                        2,
                        FlowRecord(
                            flow=_make_flow(
                                PatternKind.REDUCE,
                                layer.output_tile_bits,
                                reduce_sources,
                                (reduction,),
                                (i + 2) * period,
                                (i + 3) * period,
                            ),
                            layer=layer.name,
                            iteration=i,
                            provenance=Provenance.PSUM_REDUCE,
                        ),
                    )
                )

        if layer.name not in consumed_by:
            spill_ready = (layer.iterations + 2) * period
            drafts.append(
                (
                    layer_idx,
                    layer.iterations - 1,
                    3,
                    FlowRecord(
                        flow=_make_flow(
                            PatternKind.UNICAST,
                            layer.output_tile_bits * layer.iterations,
                            (reduction,),
                            (mc,),
                            spill_ready,
                            spill_ready + period,
                        ),
                        layer=layer.name,
                        iteration=layer.iterations - 1,
                        provenance=Provenance.OUTPUT_SPILL,
                    ),
                )
            )

    drafts.sort(key=lambda item: (item[3].flow.ready_time, item[0], item[1], item[2]))
    records = []
    for flow_id, (_, _, _, record) in enumerate(drafts):
        records.append(replace(record, flow=replace(record.flow, id=flow_id)))
    return CommunicationGraph(workload=workload, records=tuple(records))


def _make_flow(
    collective: PatternKind,
    volume: int,
    sources: tuple[NodeId, ...],
    destinations: tuple[NodeId, ...],
    ready: SlotIndex,
    deadline: SlotIndex,
) -> TrafficFlow:
    return TrafficFlow(
        id=-1,
        kind=_pattern_kind(sources, destinations, collective),
        volume=volume,
        sources=sources,
        destinations=destinations,
        ready_time=ready,
        qos_deadline=deadline,
    )


def qos_slack(flow: TrafficFlow, now: SlotIndex) -> int:
    """Slots remaining before the flow's deadline; negative means late."""
    return flow.qos_deadline - now
