"""Versioned flat text format for workload descriptions.

A file declares the mesh ([mesh] section: dimensions, memory-controller
nodes, wire widths to sweep) and one [layer <name>] section per layer.
Node lists are space-separated x,y pairs; unknown keys are rejected.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import MeshTopology, NodeId, ValidationError
from .workload import LayerSpec, WorkloadSpec, place_regions

FORMAT_VERSION = 1

_MESH_KEYS = {"width", "height", "wire_widths", "slot_per_hop", "mc"}
_LAYER_KEYS = {
    "tiles",
    "iterations",
    "weight_tile_bits",
    "input_tile_bits",
    "output_tile_bits",
    "compute_slots",
    "upstream",
    "mc",
    "region",
    "reduction_tile",
}


@dataclass
class WorkloadFile:
    """Parsed workload description, not yet bound to one wire width."""

    name: str
    width: int
    height: int
    wire_widths: list[int]
    mc_nodes: list[NodeId]
    slot_per_hop: int = 1
    layers: list[dict] = field(default_factory=list)

    def build(self, wire_width: Optional[int] = None) -> WorkloadSpec:
        """Materialize a placed WorkloadSpec at one wire width."""
        if wire_width is None:
            wire_width = self.wire_widths[0]
        mesh = MeshTopology(
            width=self.width,
            height=self.height,
            mc_nodes=tuple(self.mc_nodes),
            wire_width=wire_width,
            channel_slot_cost=self.slot_per_hop,
        )
        layers = []
        mc_assignment = {}
        for entry in self.layers:
            layers.append(
                LayerSpec(
                    name=entry["name"],
                    tile_count=entry["tiles"],
                    weight_tile_bits=entry["weight_tile_bits"],
                    input_tile_bits=entry["input_tile_bits"],
                    output_tile_bits=entry["output_tile_bits"],
                    iterations=entry["iterations"],
                    compute_slots_per_iteration=entry["compute_slots"],
                    layer_region=tuple(entry.get("region", ())),
                    reduction_tile=entry.get("reduction_tile"),
                    upstream=entry.get("upstream"),
                )
            )
            if "mc" in entry:
                mc_assignment[entry["name"]] = entry["mc"]
        spec = WorkloadSpec(mesh=mesh, layers=tuple(layers), mc_assignment=mc_assignment)
        return place_regions(spec)


def _parse_node(token: str, where: str) -> NodeId:
    try:
        x, y = token.split(",")
        return NodeId(int(x), int(y))
    except Exception:
        raise ValidationError(f"{where}: expected x,y coordinate, got {token!r}") from None


def parse_workload(text: str, name: str = "workload") -> WorkloadFile:
    mesh: dict = {}
    layers: list[dict] = []
    section: Optional[str] = None
    current: Optional[dict] = None
    version_seen = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            header = line[1:-1].strip()
            if header == "mesh":
                section = "mesh"
            elif header.startswith("layer "):
                section = "layer"
                current = {"name": header.split(None, 1)[1].strip()}
                layers.append(current)
            else:
                raise ValidationError(f"{where}: unknown section {header!r}")
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if key == "version":
            version_seen = True
            if value != str(FORMAT_VERSION):
                raise ValidationError(f"{where}: unsupported version {value!r}")
            continue
        if section == "mesh":
            if key not in _MESH_KEYS:
                raise ValidationError(f"{where}: unknown mesh key {key!r}")
            if key in ("width", "height", "slot_per_hop"):
                mesh[key] = int(value)
            elif key == "wire_widths":
                mesh[key] = [int(v) for v in value.split()]
            elif key == "mc":
                mesh[key] = [_parse_node(tok, where) for tok in value.split()]
        elif section == "layer":
            assert current is not None
            if key not in _LAYER_KEYS:
                raise ValidationError(f"{where}: unknown layer key {key!r}")
            if key in ("tiles", "iterations", "weight_tile_bits", "input_tile_bits",
                       "output_tile_bits", "compute_slots"):
                current[key] = int(value)
            elif key == "upstream":
                if value != "-":
                    current[key] = value
            elif key == "mc":
                current[key] = _parse_node(value, where)
            elif key == "reduction_tile":
                current[key] = _parse_node(value, where)
            elif key == "region":
                current[key] = [_parse_node(tok, where) for tok in value.split()]
        else:
            raise ValidationError(f"{where}: key {key!r} outside any section")

    if not version_seen:
        raise ValidationError("missing version line")
    for key in ("width", "height"):
        if key not in mesh:
            raise ValidationError(f"mesh section missing {key!r}")
    if "mc" not in mesh or not mesh["mc"]:
        raise ValidationError("mesh section needs at least one mc node")
    wire_widths = mesh.get("wire_widths", [256])
    required = {"tiles", "iterations", "weight_tile_bits", "input_tile_bits",
                "output_tile_bits", "compute_slots"}
    for entry in layers:
        missing = required - set(entry)
        if missing:
            raise ValidationError(
                f"layer {entry['name']}: missing keys {sorted(missing)}"
            )
    return WorkloadFile(
        name=name,
        width=mesh["width"],
        height=mesh["height"],
        wire_widths=wire_widths,
        mc_nodes=mesh["mc"],
        slot_per_hop=mesh.get("slot_per_hop", 1),
        layers=layers,
    )


def load_workload(path: str | Path) -> WorkloadFile:
    path = Path(path)
    return parse_workload(path.read_text(), name=path.stem)


def dump_workload(wf: WorkloadFile) -> str:
    lines = [f"version {FORMAT_VERSION}", "", "[mesh]"]
    lines.append(f"width {wf.width}")
    lines.append(f"height {wf.height}")
    lines.append("wire_widths " + " ".join(str(w) for w in wf.wire_widths))
    lines.append(f"slot_per_hop {wf.slot_per_hop}")
    lines.append("mc " + " ".join(f"{n.x},{n.y}" for n in wf.mc_nodes))
    for entry in wf.layers:
        lines.append("")
        lines.append(f"[layer {entry['name']}]")
        for key in ("tiles", "iterations", "weight_tile_bits", "input_tile_bits",
                    "output_tile_bits", "compute_slots"):
            lines.append(f"{key} {entry[key]}")
        if entry.get("upstream"):
            lines.append(f"upstream {entry['upstream']}")
        if "mc" in entry:
            lines.append(f"mc {entry['mc'].x},{entry['mc'].y}")
        if "region" in entry:
            lines.append("region " + " ".join(f"{n.x},{n.y}" for n in entry["region"]))
        if "reduction_tile" in entry:
            n = entry["reduction_tile"]
            lines.append(f"reduction_tile {n.x},{n.y}")
    return "\n".join(lines) + "\n"


def mc_positions(width: int, height: int, count: int) -> list[NodeId]:
    """Distribute memory controllers over the middles of the four edges."""
    edges = []
    for k in range(count):
        edge = k % 4
        rank = k // 4
        offset = (rank + 1) // 2 if rank % 2 else -(rank + 1) // 2
        if edge == 0:
            edges.append(NodeId(min(width - 1, max(0, width // 2 + offset)), 0))
        elif edge == 1:
            edges.append(NodeId(min(width - 1, max(0, width // 2 + offset)), height - 1))
        elif edge == 2:
            edges.append(NodeId(0, min(height - 1, max(0, height // 2 + offset))))
        else:
            edges.append(NodeId(width - 1, min(height - 1, max(0, height // 2 + offset))))
    seen = []
    for node in edges:
        while node in seen:
            node = NodeId(node.x, max(0, node.y - 1)) if node.x in (0, width - 1) else NodeId(max(0, node.x - 1), node.y)
        seen.append(node)
    return seen


def gen_workload(
    seed: int,
    width: int = 8,
    height: int = 8,
    layer_count: int = 3,
    mc_count: int = 4,
    name: str = "synthetic",
) -> WorkloadFile:
    """Deterministic synthetic workload in the bundled-file style."""
    rng = random.Random(seed)
    total_budget = width * height
    layers = []
    upstream: Optional[str] = None
    for idx in range(layer_count):
        remaining = total_budget - sum(l["tiles"] for l in layers)
        slots_left = layer_count - idx
        max_tiles = max(1, remaining - (slots_left - 1))
        tiles = rng.choice([t for t in (1, 2, 4, 8, 16) if t <= max_tiles])
        chain = upstream is not None and rng.random() < 0.5
        entry = {
            "name": f"{name}_l{idx}",
            "tiles": tiles,
            "iterations": rng.randint(1, 3),
            "weight_tile_bits": rng.choice([1, 2, 4]) * 1024,
            "input_tile_bits": rng.choice([2, 4, 8]) * 1024,
            "output_tile_bits": rng.choice([1, 2, 4]) * 1024,
            "compute_slots": rng.choice([200, 300, 400, 600]),
        }
        if chain:
            entry["upstream"] = upstream
        layers.append(entry)
        upstream = entry["name"]
    return WorkloadFile(
        name=name,
        width=width,
        height=height,
        wire_widths=[256, 512, 1024, 2048],
        mc_nodes=mc_positions(width, height, mc_count),
        layers=layers,
    )
