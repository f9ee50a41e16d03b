"""Physical route computation: dual-phase plans for collectives, load-balanced
one-to-one paths via evolutionary search, and the static baseline algorithms.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import (
    ChannelId,
    Direction,
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


class UnreachableTerminal(SlotMeshError):
    """A spanning-tree terminal cannot be reached inside the search region."""


@dataclass(frozen=True)
class EaParams:
    """Knobs of the phase-1 path search."""

    population_size: int = 64
    generations: int = 100
    mutation_rate: float = 0.1
    max_intermediate_nodes: int = 2
    rng_seed: int = 0
    load_aggregate: str = "max"  # or "sum"

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValidationError("population_size must be >= 2")
        if self.generations < 1:
            raise ValidationError("generations must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValidationError("mutation_rate must be in [0, 1]")
        if self.max_intermediate_nodes < 0:
            raise ValidationError("max_intermediate_nodes must be >= 0")
        if self.load_aggregate not in ("max", "sum"):
            raise ValidationError("load_aggregate must be 'max' or 'sum'")


@dataclass
class SpanningTree:
    """BFS tree rooted at a hub, pruned to the paths reaching its terminals."""

    root: NodeId
    parent: dict[NodeId, NodeId]
    depth: dict[NodeId, int]
    terminals: frozenset[NodeId]

    def nodes(self) -> list[NodeId]:
        return sorted(self.depth, key=lambda n: (self.depth[n], n.y, n.x))

    def children(self, node: NodeId) -> list[NodeId]:
        out = [n for n, p in self.parent.items() if p == node]
        out.sort(key=lambda n: (n.y, n.x))
        return out

    def edges(self) -> list[ChannelId]:
        """Directed parent-to-child channels in deterministic order."""
        return [ChannelId(p, c) for c, p in sorted(self.parent.items(), key=lambda kv: (kv[0].y, kv[0].x))]

    def path_to_root(self, node: NodeId) -> list[NodeId]:
        path = [node]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path

    @property
    def max_depth(self) -> int:
        return max(self.depth.values())


@dataclass
class RoutePlan:
    """Complete physical routing of one flow.

    A dual-phase plan pairs a one-to-one phase-1 path with a hub-rooted
    spanning tree. When `unicast_legs` is set the plan instead lowers the
    pattern to independent per-terminal paths.
    """

    flow_id: int
    kind: PatternKind
    hub: NodeId
    phase1_path: tuple[NodeId, ...]
    phase2_tree: SpanningTree
    total_channel_loads: dict[ChannelId, int] = field(default_factory=dict)
    unicast_legs: Optional[tuple[tuple[NodeId, ...], ...]] = None


def select_hub(flow: TrafficFlow) -> NodeId:
    """Region tile closest to the pattern's single remote terminal.

    Multicast measures from the source over destinations, Reduce from the
    destination over sources. Ties break towards the smallest (y, x).
    """
    if flow.kind is PatternKind.MULTICAST:
        terminal, candidates = flow.source, flow.destinations
    elif flow.kind is PatternKind.REDUCE:
        terminal, candidates = flow.destination, flow.sources
    else:
        return flow.destination
    return min(candidates, key=lambda n: (manhattan(terminal, n), n.y, n.x))


def xy_route(src: NodeId, dst: NodeId) -> list[NodeId]:
    """Deterministic path moving fully along x, then fully along y."""
    path = [src]
    step = 1 if dst.x > src.x else -1
    for x in range(src.x + step, dst.x + step, step) if dst.x != src.x else ():
        path.append(NodeId(x, src.y))
    step = 1 if dst.y > src.y else -1
    for y in range(src.y + step, dst.y + step, step) if dst.y != src.y else ():
        path.append(NodeId(dst.x, y))
    return path


def yx_route(src: NodeId, dst: NodeId) -> list[NodeId]:
    """Reverse dimension order: fully along y, then fully along x."""
    path = [src]
    step = 1 if dst.y > src.y else -1
    for y in range(src.y + step, dst.y + step, step) if dst.y != src.y else ():
        path.append(NodeId(src.x, y))
    step = 1 if dst.x > src.x else -1
    for x in range(src.x + step, dst.x + step, step) if dst.x != src.x else ():
        path.append(NodeId(x, dst.y))
    return path


def expand_intermediates(
    src: NodeId, dst: NodeId, intermediates: Sequence[NodeId]
) -> list[NodeId]:
    """Concatenated X-Y legs through the intermediate nodes, junctions deduped."""
    path = [src]
    for waypoint in list(intermediates) + [dst]:
        leg = xy_route(path[-1], waypoint)
        path.extend(leg[1:])
    return path


def loop_erase(path: Sequence[NodeId]) -> list[NodeId]:
    """Remove revisited nodes, cutting each cycle at its first recurrence."""
    out: list[NodeId] = []
    index: dict[NodeId, int] = {}
    for node in path:
        if node in index:
            cut = index[node]
            for removed in out[cut + 1 :]:
                del index[removed]
            del out[cut + 1 :]
        else:
            index[node] = len(out)
            out.append(node)
    return out


def _ea_box(mesh: MeshTopology, src: NodeId, dst: NodeId) -> list[NodeId]:
    """Candidate intermediates: src-dst bounding box inflated by one ring."""
    x_lo = max(0, min(src.x, dst.x) - 1)
    x_hi = min(mesh.width - 1, max(src.x, dst.x) + 1)
    y_lo = max(0, min(src.y, dst.y) - 1)
    y_hi = min(mesh.height - 1, max(src.y, dst.y) + 1)
    return [NodeId(x, y) for y in range(y_lo, y_hi + 1) for x in range(x_lo, x_hi + 1)]


def _path_fitness(
    path: list[NodeId],
    own_load: int,
    existing_loads: dict[ChannelId, int],
    aggregate: str,
) -> tuple[int, int]:
    channels = channels_of_path(path)
    if not channels:
        return (0, 0)
    per_channel = [existing_loads.get(ch, 0) + own_load for ch in channels]
    agg = max(per_channel) if aggregate == "max" else sum(per_channel)
    return (agg, len(channels))


def ea_search(
    mesh: MeshTopology,
    src: NodeId,
    dst: NodeId,
    own_load: int,
    existing_loads: dict[ChannelId, int],
    params: EaParams,
    rng: random.Random,
) -> list[NodeId]:
    """Best loop-free path found by evolving intermediate-node genomes.

    The empty genome (the plain X-Y path) seeds the population and elitism
    keeps the best genome alive, so the result never scores worse than
    dimension-order routing.
    """
    if src == dst:
        return [src]
    box = _ea_box(mesh, src, dst)

    def expand(genome: list[NodeId]) -> list[NodeId]:
        return loop_erase(expand_intermediates(src, dst, genome))

    def score(genome: list[NodeId]) -> tuple[int, int]:
        return _path_fitness(expand(genome), own_load, existing_loads, params.load_aggregate)

    def random_genome() -> list[NodeId]:
        n = rng.randint(0, params.max_intermediate_nodes)
        return [rng.choice(box) for _ in range(n)]

    def mutate(genome: list[NodeId]) -> list[NodeId]:
        out = list(genome)
        for i in range(len(out)):
            if rng.random() < params.mutation_rate:
                out[i] = rng.choice(box)
        if rng.random() < params.mutation_rate:
            if out and (len(out) >= params.max_intermediate_nodes or rng.random() < 0.5):
                out.pop(rng.randrange(len(out)))
            elif len(out) < params.max_intermediate_nodes:
                out.insert(rng.randint(0, len(out)), rng.choice(box))
        return out

    def crossover(a: list[NodeId], b: list[NodeId]) -> list[NodeId]:
        cut_a = rng.randint(0, len(a))
        cut_b = rng.randint(0, len(b))
        return (a[:cut_a] + b[cut_b:])[: params.max_intermediate_nodes]

    population = [list[NodeId]()] + [random_genome() for _ in range(params.population_size - 1)]
    scored = sorted(((score(g), g) for g in population), key=lambda sg: sg[0])
    best_score, best = scored[0]

    for _ in range(params.generations):
        def pick() -> list[NodeId]:
            a = rng.randrange(len(scored))
            b = rng.randrange(len(scored))
            return scored[min(a, b)][1]

        offspring = [list(best)]
        while len(offspring) < params.population_size:
            child = mutate(crossover(pick(), pick()))
            offspring.append(child)
        scored = sorted(((score(g), g) for g in offspring), key=lambda sg: sg[0])
        if scored[0][0] < best_score:
            best_score, best = scored[0]

    return expand(best)


def ea_route_phase1(
    flow: TrafficFlow,
    hub: NodeId,
    mesh: MeshTopology,
    existing_loads: dict[ChannelId, int],
    params: EaParams,
    rng: Optional[random.Random] = None,
) -> list[NodeId]:
    """Phase-1 path for a flow: source-to-hub for Multicast, hub-to-destination
    for Reduce, source-to-destination otherwise."""
    if flow.kind is PatternKind.MULTICAST:
        src, dst = flow.source, hub
    elif flow.kind is PatternKind.REDUCE:
        src, dst = hub, flow.destination
    else:
        src, dst = flow.source, flow.destination
    if rng is None:
        rng = random.Random(f"{params.rng_seed}:{flow.id}")
    own_load = flit_count(flow.volume, mesh.wire_width)
    return ea_search(mesh, src, dst, own_load, existing_loads, params, rng)


def bfs_spanning_tree(
    mesh: MeshTopology, hub: NodeId, terminals: Iterable[NodeId]
) -> SpanningTree:
    """Minimal-depth tree from the hub reaching every terminal.

    The search stays inside the terminals' bounding rectangle (with the hub
    included) and expands neighbours in fixed E, S, W, N order; branches
    that reach no terminal are pruned.
    """
    terminal_set = frozenset(terminals)
    if not terminal_set:
        raise ValidationError("spanning tree needs at least one terminal")
    nodes = list(terminal_set) + [hub]
    x_lo, x_hi = min(n.x for n in nodes), max(n.x for n in nodes)
    y_lo, y_hi = min(n.y for n in nodes), max(n.y for n in nodes)

    def in_rect(n: NodeId) -> bool:
        return x_lo <= n.x <= x_hi and y_lo <= n.y <= y_hi and mesh.contains(n)

    parent: dict[NodeId, NodeId] = {}
    depth = {hub: 0}
    frontier = [hub]
    while frontier:
        next_frontier = []
        for node in frontier:
            for neighbor in (node.step(d) for d in (Direction.EAST, Direction.SOUTH, Direction.WEST, Direction.NORTH)):
                if in_rect(neighbor) and neighbor not in depth:
                    depth[neighbor] = depth[node] + 1
                    parent[neighbor] = node
                    next_frontier.append(neighbor)
        frontier = next_frontier

    missing = [t for t in terminal_set if t not in depth]
    if missing:
        raise UnreachableTerminal(f"terminals {missing} unreachable from {hub}")

    keep = {hub}
    for t in terminal_set:
        node = t
        while node not in keep:
            keep.add(node)
            node = parent[node]
    pruned_parent = {n: p for n, p in parent.items() if n in keep}
    pruned_depth = {n: d for n, d in depth.items() if n in keep}
    return SpanningTree(root=hub, parent=pruned_parent, depth=pruned_depth, terminals=terminal_set)


def hop_savings(l: float, k: float, m: int) -> float:
    """Channel traversals saved by dual-phase routing over per-terminal
    unicasts: l*(m-1) - k*m for m terminals at mean remote distance l and
    mean in-region distance k."""
    if l < 0 or k < 0 or m < 1:
        raise ValidationError("hop_savings needs l, k >= 0 and m >= 1")
    return l * (m - 1) - k * m


def baseline_path(
    alg: str,
    src: NodeId,
    dst: NodeId,
    rng: Optional[random.Random] = None,
    parity: int = 0,
) -> list[NodeId]:
    """Static baseline route: DOR, XYYX (by injection-time parity), or ROMM.

    Minimal-adaptive routing has no static path; the baseline simulator
    chooses its channels hop by hop.
    """
    alg = alg.lower()
    if alg == "dor":
        return xy_route(src, dst)
    if alg == "xyyx":
        return xy_route(src, dst) if parity % 2 == 0 else yx_route(src, dst)
    if alg == "romm":
        if rng is None:
            raise ValidationError("ROMM needs an rng")
        x_lo, x_hi = min(src.x, dst.x), max(src.x, dst.x)
        y_lo, y_hi = min(src.y, dst.y), max(src.y, dst.y)
        mid = NodeId(rng.randint(x_lo, x_hi), rng.randint(y_lo, y_hi))
        path = xy_route(src, mid)
        path.extend(xy_route(mid, dst)[1:])
        return path
    raise ValidationError(f"unknown baseline algorithm {alg!r}")


@dataclass(frozen=True)
class Transmission:
    """One independently injected worm of a routed flow.

    `path` is the source-routed node sequence; a Multicast's main
    transmission additionally fans out over `tree` once the head reaches
    the hub. Gather legs of a Reduce flow deliver to the hub; its fan-out
    transmission may only start after every gather leg has finished.
    """

    flow_id: int
    key: str
    path: tuple[NodeId, ...]
    tree: Optional[SpanningTree] = None
    after_gather: bool = False

    @property
    def consumers(self) -> tuple[NodeId, ...]:
        if self.tree is not None:
            return tuple(sorted(self.tree.terminals, key=lambda n: (n.y, n.x)))
        return (self.path[-1],)

    @property
    def source(self) -> NodeId:
        return self.path[0]


def plan_transmissions(plan: RoutePlan) -> list[Transmission]:
    """Decompose a plan into its injection units, in deterministic order."""
    fid = plan.flow_id
    if plan.unicast_legs is not None:
        return [
            Transmission(fid, f"leg{idx}", tuple(leg))
            for idx, leg in enumerate(plan.unicast_legs)
        ]
    if plan.kind is PatternKind.MULTICAST and len(plan.phase2_tree.terminals) > 1:
        return [Transmission(fid, "main", plan.phase1_path, tree=plan.phase2_tree)]
    if plan.kind is PatternKind.REDUCE:
        out = []
        tree = plan.phase2_tree
        for idx, source in enumerate(sorted(tree.terminals, key=lambda n: (n.y, n.x))):
            if source == plan.hub:
                continue  # the hub's own contribution never enters the network
            out.append(
                Transmission(fid, f"gather{idx}", tuple(tree.path_to_root(source)))
            )
        if len(plan.phase1_path) > 1:
            out.append(
                Transmission(fid, "fanout", plan.phase1_path, after_gather=True)
            )
        if not out:
            # Degenerate reduce: hub is also the destination and only source.
            out.append(Transmission(fid, "main", plan.phase1_path))
        return out
    return [Transmission(fid, "main", plan.phase1_path)]


def transmission_channels(tx: Transmission) -> list[ChannelId]:
    """Every mesh channel a transmission crosses, path first, then tree edges."""
    out = channels_of_path(tx.path)
    if tx.tree is not None:
        out.extend(tx.tree.edges())
    return out


def _dual_phase_cost(plan: RoutePlan) -> int:
    return sum(len(transmission_channels(tx)) for tx in plan_transmissions(plan))


def _unicast_cost(flow: TrafficFlow) -> int:
    if flow.kind is PatternKind.MULTICAST:
        return sum(manhattan(flow.source, d) for d in flow.destinations)
    if flow.kind is PatternKind.REDUCE:
        return sum(manhattan(s, flow.destination) for s in flow.sources)
    return manhattan(flow.source, flow.destination)


def _singleton_tree(node: NodeId) -> SpanningTree:
    return SpanningTree(root=node, parent={}, depth={node: 0}, terminals=frozenset({node}))


def route_flow(
    flow: TrafficFlow,
    mesh: MeshTopology,
    existing_loads: dict[ChannelId, int],
    params: EaParams,
) -> RoutePlan:
    """Route a single flow against the channel loads accumulated so far.

    Collectives whose dual-phase plan would cross strictly more channels
    than per-terminal unicasts are lowered to unicast legs instead.
    """
    rng = random.Random(f"{params.rng_seed}:{flow.id}")
    s_ser = flit_count(flow.volume, mesh.wire_width)

    def ea(src: NodeId, dst: NodeId, loads: dict[ChannelId, int]) -> tuple[NodeId, ...]:
        return tuple(ea_search(mesh, src, dst, s_ser, loads, params, rng))

    if flow.kind in (PatternKind.UNICAST, PatternKind.LINK_TRANSFER):
        hub = flow.destination
        plan = RoutePlan(
            flow_id=flow.id,
            kind=flow.kind,
            hub=hub,
            phase1_path=ea(flow.source, hub, existing_loads),
            phase2_tree=_singleton_tree(hub),
        )
    else:
        hub = select_hub(flow)
        if flow.kind is PatternKind.MULTICAST:
            terminals = flow.destinations
            phase1 = ea(flow.source, hub, existing_loads)
        else:
            terminals = flow.sources
            phase1 = ea(hub, flow.destination, existing_loads)
        if len(terminals) == 1:
            # One-terminal collectives degrade to a plain unicast path.
            only = terminals[0]
            endpoint = (flow.source, only) if flow.kind is PatternKind.MULTICAST else (only, flow.destination)
            plan = RoutePlan(
                flow_id=flow.id,
                kind=PatternKind.UNICAST,
                hub=endpoint[1],
                phase1_path=ea(endpoint[0], endpoint[1], existing_loads),
                phase2_tree=_singleton_tree(endpoint[1]),
            )
        else:
            tree = bfs_spanning_tree(mesh, hub, terminals)
            plan = RoutePlan(
                flow_id=flow.id,
                kind=flow.kind,
                hub=hub,
                phase1_path=phase1,
                phase2_tree=tree,
            )
            if _dual_phase_cost(plan) > _unicast_cost(flow):
                legs = []
                leg_loads = dict(existing_loads)
                if flow.kind is PatternKind.MULTICAST:
                    endpoints = [(flow.source, d) for d in flow.destinations]
                else:
                    endpoints = [(s, flow.destination) for s in flow.sources]
                for src, dst in endpoints:
                    leg = ea(src, dst, leg_loads)
                    for ch in channels_of_path(list(leg)):
                        leg_loads[ch] = leg_loads.get(ch, 0) + s_ser
                    legs.append(leg)
                plan.unicast_legs = tuple(legs)

    loads: dict[ChannelId, int] = {}
    for tx in plan_transmissions(plan):
        for ch in transmission_channels(tx):
            loads[ch] = loads.get(ch, 0) + s_ser
    plan.total_channel_loads = loads
    return plan


def route_flows(
    flows: Sequence[TrafficFlow],
    mesh: MeshTopology,
    params: Optional[EaParams] = None,
) -> dict[int, RoutePlan]:
    """Route flows one at a time in ready order, accumulating channel loads.

    The sequential order is part of the deterministic contract: a flow sees
    exactly the loads of flows routed before it.
    """
    params = params or EaParams()
    ordered = sorted(flows, key=lambda f: (f.ready_time, f.id))
    loads: dict[ChannelId, int] = {}
    plans: dict[int, RoutePlan] = {}
    for flow in ordered:
        plan = route_flow(flow, mesh, loads, params)
        for ch, load in plan.total_channel_loads.items():
            loads[ch] = loads.get(ch, 0) + load
        plans[flow.id] = plan
    return plans
