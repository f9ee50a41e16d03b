"""Experiment orchestration: scheme runs, wire-width sweeps, the feature
ladder, and deterministic report emission.

All cross-scheme quantities are reported in cycles. One scheduling slot of
the slotted fabric is router_cycles + wire_cycles cycles; layer compute
periods, declared in slots, scale by the same factor for every scheme so
per-tile compute totals are scheme-invariant.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import MeshTopology, PatternKind, SlotMeshError, TrafficFlow, ValidationError
from .hwconfig import Framing, build_accelerator_config
from .routing import EaParams, route_flows
from .scheduling import InjectionSchedule, chunk_flits_for, schedule, verify_schedule
from .simulator.baseline import NocParams, simulate_baseline
from .simulator.fabric import SimResult, simulate_metro
from .simulator.tiles import TileSimResult, instant_arrivals, simulate_tiles
from .workload import CommunicationGraph, Provenance, extract_flows
from .workload_io import WorkloadFile

TDM_SCHEME = "tdm"
ALL_SCHEMES = (TDM_SCHEME, "dor", "xyyx", "romm", "mad")

METRO_ROUTER_CYCLES = 2
METRO_WIRE_CYCLES = 1
CYCLES_PER_SLOT = METRO_ROUTER_CYCLES + METRO_WIRE_CYCLES


class ZeroCompute(ValidationError):
    """Bounded ratio asked for with zero computation time."""


def bounded_ratio(transmission: float, computation: float) -> float:
    """Data-transmission time over computation time; above 1 the traffic
    bounds overall performance."""
    if computation <= 0:
        raise ZeroCompute("computation time must be positive")
    return transmission / computation


def flow_classes(graph: CommunicationGraph) -> dict[int, str]:
    """Table-entry sharing classes: one per layer tensor pattern."""
    classes = {}
    for record in graph.records:
        provenance = record.provenance
        if provenance is Provenance.INTER_LAYER:
            provenance = Provenance.INPUTS
        classes[record.flow.id] = f"{record.layer}:{provenance.value}"
    return classes


@dataclass
class SchemeRun:
    """One (workload, wire width, scheme) pipeline result, cycle units."""

    workload: str
    wire_width: int
    scheme: str
    tile_result: TileSimResult
    ideal_makespan: int
    comm_time: int
    makespan: int
    late_flows: int
    total_flows: int
    sim: SimResult
    graph: CommunicationGraph
    sched: Optional[InjectionSchedule] = None

    @property
    def mean_bounded_ratio(self) -> float:
        return self.tile_result.mean_bounded_ratio

    @property
    def max_bounded_ratio(self) -> float:
        return self.tile_result.max_bounded_ratio

    @property
    def normalized_makespan(self) -> float:
        if self.ideal_makespan == 0:
            return 1.0
        return self.makespan / self.ideal_makespan


def _comm_time(graph: CommunicationGraph, arrivals, scale: int) -> int:
    total = 0
    for record in graph.records:
        flow = record.flow
        tail = max(arrivals[flow.id].values())
        total += max(0, tail - flow.ready_time * scale)
    return total


def _late_flows(graph: CommunicationGraph, arrivals, scale: int) -> int:
    late = 0
    for record in graph.records:
        flow = record.flow
        tail = max(arrivals[flow.id].values())
        if tail > flow.qos_deadline * scale:
            late += 1
    return late


def run_tdm_pipeline(
    graph: CommunicationGraph,
    mesh: MeshTopology,
    ea_params: Optional[EaParams] = None,
    framing: Framing = Framing(),
    collect_trace: bool = False,
):
    """Route, schedule, emit, and simulate the slotted fabric.

    Returns (plans, schedule, config, sim result); conflicts anywhere
    raise, so a returned result is contention-free by construction.
    """
    plans = route_flows(graph.flows, mesh, ea_params or EaParams())
    flits_for = chunk_flits_for(mesh, framing)
    sched = schedule(graph.flows, plans, mesh, flits_for)
    conflicts = verify_schedule(sched)
    if conflicts:
        raise SlotMeshError(f"scheduler produced {len(conflicts)} conflicts")
    volumes = {f.id: f.volume for f in graph.flows}
    config = build_accelerator_config(
        plans, volumes, mesh.wire_width, framing, flow_classes(graph)
    )
    sim = simulate_metro(
        config,
        sched,
        mesh,
        router_cycles=METRO_ROUTER_CYCLES,
        wire_cycles=METRO_WIRE_CYCLES,
        collect_trace=collect_trace,
    )
    return plans, sched, config, sim


def run_scheme(
    wf: WorkloadFile,
    wire_width: int,
    scheme: str,
    seed: int = 0,
    ea_params: Optional[EaParams] = None,
    noc_params: Optional[NocParams] = None,
    packet_payload_flits: int = 8,
) -> SchemeRun:
    """Full pipeline for one report cell."""
    workload = wf.build(wire_width)
    graph = extract_flows(workload)
    mesh = workload.mesh
    cps = CYCLES_PER_SLOT

    if scheme == TDM_SCHEME:
        params = ea_params or EaParams(rng_seed=seed)
        _, sched, _, sim = run_tdm_pipeline(graph, mesh, params)
        arrivals = {
            fid: {node: slot * cps for node, slot in timing.node_arrival.items()}
            for fid, timing in sim.flows.items()
        }
        sched_out = sched
    elif scheme in ("dor", "xyyx", "romm", "mad"):
        sim = simulate_baseline(
            graph.flows,
            mesh,
            alg=scheme,
            params=noc_params or NocParams(),
            packet_payload_flits=packet_payload_flits,
            cycles_per_slot=cps,
            seed=seed,
        )
        arrivals = {
            fid: dict(timing.node_arrival) for fid, timing in sim.flows.items()
        }
        sched_out = None
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")

    tile_result = simulate_tiles(graph, arrivals, scale=cps, unit="cycle")
    ideal = simulate_tiles(graph, instant_arrivals(graph, cps), scale=cps, unit="cycle")
    return SchemeRun(
        workload=wf.name,
        wire_width=wire_width,
        scheme=scheme,
        tile_result=tile_result,
        ideal_makespan=ideal.makespan,
        comm_time=_comm_time(graph, arrivals, cps),
        makespan=tile_result.makespan,
        late_flows=_late_flows(graph, arrivals, cps),
        total_flows=len(graph.records),
        sim=sim,
        graph=graph,
        sched=sched_out,
    )


@dataclass
class ExperimentReport:
    """Sweep results: one row per (workload, wire width, scheme)."""

    runs: list[SchemeRun] = field(default_factory=list)

    def summary_rows(self) -> list[dict]:
        rows = []
        for run in sorted(self.runs, key=lambda r: (r.workload, r.wire_width, r.scheme)):
            rows.append(
                {
                    "workload": run.workload,
                    "wire_width": run.wire_width,
                    "scheme": run.scheme,
                    "mean_bounded_ratio": f"{run.mean_bounded_ratio:.6f}",
                    "max_bounded_ratio": f"{run.max_bounded_ratio:.6f}",
                    "comm_time_cycles": run.comm_time,
                    "makespan_cycles": run.makespan,
                    "ideal_makespan_cycles": run.ideal_makespan,
                    "normalized_makespan": f"{run.normalized_makespan:.6f}",
                    "late_flows": run.late_flows,
                    "total_flows": run.total_flows,
                }
            )
        return rows

    def tile_rows(self) -> list[dict]:
        rows = []
        for run in sorted(self.runs, key=lambda r: (r.workload, r.wire_width, r.scheme)):
            for tile in sorted(run.tile_result.tiles, key=lambda n: (n.y, n.x)):
                account = run.tile_result.tiles[tile]
                rows.append(
                    {
                        "workload": run.workload,
                        "wire_width": run.wire_width,
                        "scheme": run.scheme,
                        "tile_x": tile.x,
                        "tile_y": tile.y,
                        "layer": account.layer,
                        "compute_cycles": account.compute_units,
                        "stall_cycles": account.stall_units,
                        "comm_cycles": account.comm_units,
                        "bounded_ratio": f"{account.bounded_ratio:.6f}",
                    }
                )
        return rows


def run_comparison(
    wf: WorkloadFile,
    wire_widths: Sequence[int],
    schemes: Sequence[str] = ALL_SCHEMES,
    seed: int = 0,
    noc_params: Optional[NocParams] = None,
) -> ExperimentReport:
    """Sweep every (wire width, scheme) cell of one workload."""
    report = ExperimentReport()
    for width in wire_widths:
        for scheme in schemes:
            try:
                report.runs.append(
                    run_scheme(wf, width, scheme, seed=seed, noc_params=noc_params)
                )
            except SlotMeshError as err:
                raise type(err)(
                    f"[workload={wf.name} width={width} scheme={scheme}] {err}"
                ) from err
    return report


ABLATION_STAGES = (
    "contention",
    "slot_injection",
    "dual_phase",
    "ea_balancing",
    "chunk_framing",
)


@dataclass
class AblationRow:
    stage: str
    comm_time_cycles: int
    reduction_vs_previous: float


@dataclass
class AblationReport:
    workload: str
    wire_width: int
    rows: list[AblationRow]

    @property
    def monotone(self) -> bool:
        times = [r.comm_time_cycles for r in self.rows]
        return all(b <= a for a, b in zip(times, times[1:]))


def _lowered_graph(graph: CommunicationGraph) -> tuple[list[TrafficFlow], dict[int, int]]:
    """Per-terminal unicast flows, with a map back to their parent flow."""
    from .simulator.baseline import lower_to_unicasts

    lowered: list[TrafficFlow] = []
    parent: dict[int, int] = {}
    next_id = 0
    for flow, _copy, src, dst in lower_to_unicasts(graph.flows):
        lowered.append(
            TrafficFlow(
                id=next_id,
                kind=PatternKind.UNICAST,
                volume=flow.volume,
                sources=(src,),
                destinations=(dst,),
                ready_time=flow.ready_time,
                qos_deadline=flow.qos_deadline,
            )
        )
        parent[next_id] = flow.id
        next_id += 1
    return lowered, parent


def run_ablation(
    wf: WorkloadFile,
    wire_width: int,
    seed: int = 0,
) -> AblationReport:
    """Cumulative feature ladder, total communication latency per stage.

    Stages: contending unicasts on the slim routers; slot-based injection
    control over the same unicasts; dual-phase routing without the path
    search; the evolutionary path balancing; chunk-level framing.
    """
    workload = wf.build(wire_width)
    graph = extract_flows(workload)
    mesh = workload.mesh
    cps = CYCLES_PER_SLOT
    packet = Framing(mode="packet")
    rows: list[AblationRow] = []

    def add(stage: str, comm: int) -> None:
        prev = rows[-1].comm_time_cycles if rows else None
        reduction = 0.0 if prev in (None, 0) else (prev - comm) / prev
        rows.append(AblationRow(stage, comm, reduction))

    lowered, parent = _lowered_graph(graph)

    # Stage 1: ready-time injection, contention resolved in the network.
    sim = simulate_baseline(
        lowered,
        mesh,
        alg="dor",
        params=NocParams(
            router_cycles=METRO_ROUTER_CYCLES,
            wire_cycles=METRO_WIRE_CYCLES,
            vcs=1,
            buffer_depth=1,
        ),
        packet_payload_flits=packet.packet_payload_flits,
        cycles_per_slot=cps,
        seed=seed,
    )
    add("contention", _parent_comm_time(sim, lowered, parent, graph, cps))

    no_search = EaParams(max_intermediate_nodes=0, rng_seed=seed)
    searched = EaParams(rng_seed=seed)

    # Stage 2: slot injection control over the same unicast lowering.
    comm = _tdm_comm_time_flows(lowered, parent, graph, mesh, no_search, packet, cps)
    add("slot_injection", comm)

    # Stages 3-5 schedule the collective patterns directly.
    for stage, params, framing in (
        ("dual_phase", no_search, packet),
        ("ea_balancing", searched, packet),
        ("chunk_framing", searched, Framing(mode="chunk")),
    ):
        _, sched, _, sim = run_tdm_pipeline(graph, mesh, params, framing)
        arrivals = {
            fid: {n: s * cps for n, s in t.node_arrival.items()}
            for fid, t in sim.flows.items()
        }
        add(stage, _comm_time(graph, arrivals, cps))

    return AblationReport(workload=wf.name, wire_width=wire_width, rows=rows)


def _parent_comm_time(sim, lowered, parent, graph, cps) -> int:
    tails: dict[int, int] = {}
    for fid, timing in sim.flows.items():
        pid = parent[fid]
        tails[pid] = max(tails.get(pid, 0), timing.tail_arrival)
    total = 0
    for record in graph.records:
        flow = record.flow
        total += max(0, tails[flow.id] - flow.ready_time * cps)
    return total


def _tdm_comm_time_flows(lowered, parent, graph, mesh, params, framing, cps) -> int:
    mini_graph_flows = lowered
    plans = route_flows(mini_graph_flows, mesh, params)
    flits_for = chunk_flits_for(mesh, framing)
    sched = schedule(mini_graph_flows, plans, mesh, flits_for)
    tails: dict[int, int] = {}
    for fid, fs in sched.flows.items():
        pid = parent[fid]
        tails[pid] = max(tails.get(pid, 0), fs.completion_slot * cps)
    total = 0
    for record in graph.records:
        flow = record.flow
        total += max(0, tails[flow.id] - flow.ready_time * cps)
    return total


# ---------------------------------------------------------------------------
# Report emission


def write_csv(path: Path, rows: list[dict]) -> None:
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_json(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def format_table(rows: list[dict]) -> str:
    if not rows:
        return "(empty)\n"
    headers = list(rows[0].keys())
    widths = {h: max(len(h), *(len(str(r[h])) for r in rows)) for h in headers}
    lines = ["  ".join(h.ljust(widths[h]) for h in headers)]
    lines.append("  ".join("-" * widths[h] for h in headers))
    for row in rows:
        lines.append("  ".join(str(row[h]).ljust(widths[h]) for h in headers))
    return "\n".join(lines) + "\n"


def ablation_rows(report: AblationReport) -> list[dict]:
    return [
        {
            "workload": report.workload,
            "wire_width": report.wire_width,
            "stage": row.stage,
            "comm_time_cycles": row.comm_time_cycles,
            "reduction_vs_previous": f"{row.reduction_vs_previous:.6f}",
        }
        for row in report.rows
    ]
