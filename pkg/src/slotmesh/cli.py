"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 simulation
error.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .core import ValidationError
from .hwconfig import Framing, build_accelerator_config, config_dump
from .metrics import (
    ALL_SCHEMES,
    CYCLES_PER_SLOT,
    ExperimentReport,
    ablation_rows,
    flow_classes,
    format_table,
    run_ablation,
    run_comparison,
    run_scheme,
    run_tdm_pipeline,
    write_csv,
    write_json,
)
from .routing import EaParams, route_flows
from .scheduling import chunk_flits_for, schedule as make_schedule, verify_schedule
from .simulator.fabric import SimulationError
from .workload import extract_flows, qos_slack
from .workload_io import dump_workload, gen_workload, load_workload


def _emit(rows, fmt: str, out: Path | None, stem: str) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"{stem}.csv", rows)
        write_json(out / f"{stem}.json", rows)
    if fmt == "json":
        import json

        click.echo(json.dumps(rows, indent=2, sort_keys=True))
    elif fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        click.echo(buf.getvalue(), nl=False)
    else:
        click.echo(format_table(rows), nl=False)


def _widths(value: str) -> list[int]:
    try:
        return [int(tok) for tok in value.replace(",", " ").split()]
    except ValueError:
        raise click.UsageError(f"bad wire-width list {value!r}")


format_option = click.option(
    "--format", "fmt", type=click.Choice(["csv", "json", "table"]), default="table"
)
out_option = click.option("--out", type=click.Path(path_type=Path), default=None)
seed_option = click.option("--seed", type=int, default=0, show_default=True)
width_option = click.option("--wire-width", default=None, help="bits per flit")


@click.group()
def cli() -> None:
    """Traffic scheduling and mesh-interconnect simulation for tiled
    accelerators."""


@cli.command("gen-workload")
@click.option("--mesh", default="8x8", show_default=True, help="WIDTHxHEIGHT")
@click.option("--layers", default=3, show_default=True)
@click.option("--mcs", default=4, show_default=True)
@seed_option
@click.option("--out", type=click.Path(path_type=Path), required=True)
def gen_workload_cmd(mesh: str, layers: int, mcs: int, seed: int, out: Path) -> None:
    """Write a synthetic workload file."""
    try:
        width, height = (int(v) for v in mesh.lower().split("x"))
    except ValueError:
        raise click.UsageError(f"bad mesh spec {mesh!r}")
    wf = gen_workload(seed, width, height, layers, mcs, name=out.stem)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_workload(wf))
    click.echo(f"wrote {out}")


@cli.command()
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@width_option
@format_option
@out_option
def extract(workload: Path, wire_width, fmt: str, out) -> None:
    """Extract the traffic flows of a workload."""
    wf = load_workload(workload)
    spec = wf.build(int(wire_width) if wire_width else None)
    graph = extract_flows(spec)
    rows = [
        {
            "flow": r.flow.id,
            "layer": r.layer,
            "iteration": r.iteration,
            "provenance": r.provenance.value,
            "kind": r.flow.kind.value,
            "volume_bits": r.flow.volume,
            "sources": " ".join(f"{n.x},{n.y}" for n in r.flow.sources),
            "destinations": " ".join(f"{n.x},{n.y}" for n in r.flow.destinations),
            "ready_slot": r.flow.ready_time,
            "qos_deadline_slot": r.flow.qos_deadline,
        }
        for r in graph.records
    ]
    _emit(rows, fmt, out, f"{wf.name}_flows")


@cli.command()
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@width_option
@seed_option
@format_option
@out_option
def route(workload: Path, wire_width, seed: int, fmt: str, out) -> None:
    """Compute dual-phase route plans for every flow."""
    wf = load_workload(workload)
    spec = wf.build(int(wire_width) if wire_width else None)
    graph = extract_flows(spec)
    plans = route_flows(graph.flows, spec.mesh, EaParams(rng_seed=seed))
    rows = []
    for fid in sorted(plans):
        plan = plans[fid]
        rows.append(
            {
                "flow": fid,
                "kind": plan.kind.value,
                "hub": f"{plan.hub.x},{plan.hub.y}",
                "phase1_path": " ".join(f"{n.x},{n.y}" for n in plan.phase1_path),
                "tree_nodes": len(plan.phase2_tree.depth),
                "tree_depth": plan.phase2_tree.max_depth,
                "unicast_legs": 0 if plan.unicast_legs is None else len(plan.unicast_legs),
                "channels_loaded": len(plan.total_channel_loads),
            }
        )
    _emit(rows, fmt, out, f"{wf.name}_routes")


@cli.command("schedule")
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@width_option
@seed_option
@format_option
@out_option
def schedule_cmd(workload: Path, wire_width, seed: int, fmt: str, out) -> None:
    """Slot-based injection schedule plus a lateness summary."""
    wf = load_workload(workload)
    spec = wf.build(int(wire_width) if wire_width else None)
    graph = extract_flows(spec)
    mesh = spec.mesh
    plans = route_flows(graph.flows, mesh, EaParams(rng_seed=seed))
    sched = make_schedule(graph.flows, plans, mesh, chunk_flits_for(mesh))
    conflicts = verify_schedule(sched)
    rows = []
    for fid in sorted(sched.flows):
        fs = sched.flows[fid]
        for st in fs.transmissions:
            rows.append(
                {
                    "flow": fid,
                    "tx": st.tx.key,
                    "inject_slot": st.inject_slot,
                    "completion_slot": st.completion_slot,
                    "flits": st.s_ser,
                    "qos_deadline": fs.flow.qos_deadline,
                    "slack": qos_slack(fs.flow, st.completion_slot),
                }
            )
    _emit(rows, fmt, out, f"{wf.name}_schedule")
    late = sched.late_flows()
    click.echo(
        f"conflicts={len(conflicts)} late_flows={len(late)} "
        f"makespan_slots={sched.makespan}"
    )


@cli.command("emit-config")
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@width_option
@seed_option
@out_option
def emit_config(workload: Path, wire_width, seed: int, out) -> None:
    """Bit-exact router configuration dump."""
    wf = load_workload(workload)
    spec = wf.build(int(wire_width) if wire_width else None)
    graph = extract_flows(spec)
    mesh = spec.mesh
    plans = route_flows(graph.flows, mesh, EaParams(rng_seed=seed))
    volumes = {f.id: f.volume for f in graph.flows}
    config = build_accelerator_config(
        plans, volumes, mesh.wire_width, Framing(), flow_classes(graph)
    )
    text = config_dump(config)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{wf.name}_config.txt").write_text(text)
    click.echo(text, nl=False)


@cli.command()
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@width_option
@click.option("--scheme", type=click.Choice(list(ALL_SCHEMES)), default="tdm")
@seed_option
@format_option
@out_option
@click.option("--trace", type=click.Path(path_type=Path), default=None,
              help="write a per-flit event trace (tdm scheme only)")
def simulate(workload: Path, wire_width, scheme: str, seed: int, fmt: str, out, trace) -> None:
    """Cycle-accurate simulation of one scheme at one wire width."""
    wf = load_workload(workload)
    width = int(wire_width) if wire_width else wf.wire_widths[0]
    if trace is not None and scheme == "tdm":
        spec = wf.build(width)
        graph = extract_flows(spec)
        _, _, _, sim = run_tdm_pipeline(
            graph, spec.mesh, EaParams(rng_seed=seed), collect_trace=True
        )
        trace.parent.mkdir(parents=True, exist_ok=True)
        trace.write_text("\n".join(sim.trace or []) + "\n")
    run = run_scheme(wf, width, scheme, seed=seed)
    rows = [
        {
            "flow": fid,
            "injection": t.injection,
            "head_arrival": t.head_arrival,
            "tail_arrival": t.tail_arrival,
            "unit": run.sim.unit,
        }
        for fid, t in sorted(run.sim.flows.items())
    ]
    _emit(rows, fmt, out, f"{wf.name}_{scheme}_{width}_sim")
    click.echo(
        f"scheme={scheme} width={width} mean_bounded_ratio={run.mean_bounded_ratio:.4f} "
        f"makespan_cycles={run.makespan} late_flows={run.late_flows}"
    )


@cli.command()
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@click.option("--wire-width", "wire_widths", default="256,512,1024,2048",
              show_default=True, help="comma-separated sweep list")
@click.option("--schemes", default=",".join(ALL_SCHEMES), show_default=True)
@seed_option
@format_option
@click.option("--out", type=click.Path(path_type=Path), default=Path("out"),
              show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
def compare(workload: Path, wire_widths: str, schemes: str, seed: int, fmt: str,
            out: Path, plot: bool) -> None:
    """Sweep wire widths and schemes; emit reports and figures."""
    wf = load_workload(workload)
    widths = _widths(wire_widths)
    scheme_list = [s.strip() for s in schemes.split(",") if s.strip()]
    for s in scheme_list:
        if s not in ALL_SCHEMES:
            raise click.UsageError(f"unknown scheme {s!r}")
    report = run_comparison(wf, widths, scheme_list, seed=seed)
    rows = report.summary_rows()
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{wf.name}_summary.csv", rows)
    write_csv(out / f"{wf.name}_tiles.csv", report.tile_rows())
    write_json(out / f"{wf.name}_summary.json", rows)
    if plot:
        from .plotting import comparison_figure

        for path in comparison_figure(report, out):
            click.echo(f"figure {path}")
    _emit(rows, fmt, None, "")
    click.echo(f"reports under {out}")


@cli.command()
@click.argument("workload", type=click.Path(exists=True, path_type=Path))
@click.option("--wire-width", default="1024", show_default=True)
@seed_option
@format_option
@click.option("--out", type=click.Path(path_type=Path), default=Path("out"),
              show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
def ablate(workload: Path, wire_width: str, seed: int, fmt: str, out: Path,
           plot: bool) -> None:
    """Cumulative feature ladder at one wire width."""
    wf = load_workload(workload)
    report = run_ablation(wf, int(wire_width), seed=seed)
    rows = ablation_rows(report)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{wf.name}_ablation.csv", rows)
    write_json(out / f"{wf.name}_ablation.json", rows)
    if plot:
        from .plotting import ablation_figure

        path = ablation_figure(report, out)
        click.echo(f"figure {path}")
    _emit(rows, fmt, None, "")
    click.echo(f"monotone_non_increasing={report.monotone}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return 0 if exc.exit_code == 0 else 1
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        return 2
    except SimulationError as exc:
        click.echo(f"simulation error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
