"""Contention-free slot scheduling and cycle-accurate simulation for
tiled-accelerator mesh interconnects."""

from .core import (
    ChannelId,
    Direction,
    Flit,
    FlitRole,
    MeshTopology,
    NodeId,
    PatternKind,
    SlotMeshError,
    TrafficFlow,
    ValidationError,
    channels_of_path,
    flit_count,
    manhattan,
)
from .routing import (
    EaParams,
    RoutePlan,
    baseline_path,
    bfs_spanning_tree,
    ea_route_phase1,
    expand_intermediates,
    hop_savings,
    route_flows,
    select_hub,
    xy_route,
)
from .scheduling import (
    InjectionSchedule,
    ReservationTimeline,
    earliest_feasible_injection,
    flow_latency,
    occupancy,
    schedule,
    verify_schedule,
)
from .workload import (
    CommunicationGraph,
    LayerSpec,
    WorkloadSpec,
    extract_flows,
    place_regions,
    qos_slack,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelId",
    "CommunicationGraph",
    "Direction",
    "EaParams",
    "Flit",
    "FlitRole",
    "InjectionSchedule",
    "LayerSpec",
    "MeshTopology",
    "NodeId",
    "PatternKind",
    "ReservationTimeline",
    "RoutePlan",
    "SlotMeshError",
    "TrafficFlow",
    "ValidationError",
    "WorkloadSpec",
    "baseline_path",
    "bfs_spanning_tree",
    "channels_of_path",
    "ea_route_phase1",
    "earliest_feasible_injection",
    "expand_intermediates",
    "extract_flows",
    "flit_count",
    "flow_latency",
    "hop_savings",
    "manhattan",
    "occupancy",
    "place_regions",
    "qos_slack",
    "route_flows",
    "schedule",
    "select_hub",
    "verify_schedule",
    "xy_route",
]
