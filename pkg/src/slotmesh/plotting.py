"""Figure rendering for the report paths.

Comparison sweeps render one bounded-ratio-versus-wire-width chart per
workload; the ablation ladder renders a latency bar chart. Figures land
next to the delimited reports.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import AblationReport, ExperimentReport

_SCHEME_STYLE = {
    "tdm": {"color": "#1a5fb4", "marker": "o"},
    "dor": {"color": "#c01c28", "marker": "s"},
    "xyyx": {"color": "#e66100", "marker": "^"},
    "romm": {"color": "#613583", "marker": "v"},
    "mad": {"color": "#26a269", "marker": "d"},
}


def comparison_figure(report: ExperimentReport, out_dir: Path) -> list[Path]:
    """One mean-bounded-ratio curve chart per workload; returns file paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    by_workload: dict[str, dict[str, list[tuple[int, float]]]] = {}
    for run in report.runs:
        by_workload.setdefault(run.workload, {}).setdefault(run.scheme, []).append(
            (run.wire_width, run.mean_bounded_ratio)
        )
    paths = []
    for workload, schemes in sorted(by_workload.items()):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for scheme, points in sorted(schemes.items()):
            points.sort()
            widths = [w for w, _ in points]
            ratios = [r for _, r in points]
            style = _SCHEME_STYLE.get(scheme, {})
            ax.plot(widths, ratios, label=scheme, **style)
        ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
        ax.set_xscale("log", base=2)
        ax.set_xticks(sorted({w for pts in schemes.values() for w, _ in pts}))
        ax.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
        ax.set_xlabel("wire width (bits)")
        ax.set_ylabel("mean bounded ratio")
        ax.set_title(workload)
        ax.legend(fontsize=8)
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
        fig.tight_layout()
        path = out_dir / f"compare_{workload}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def ablation_figure(report: AblationReport, out_dir: Path) -> Path:
    """Bar chart of communication latency per cumulative feature stage."""
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    stages = [row.stage for row in report.rows]
    times = [row.comm_time_cycles for row in report.rows]
    ax.bar(range(len(stages)), times, color="#1a5fb4")
    ax.set_xticks(range(len(stages)))
    ax.set_xticklabels(stages, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("communication time (cycles)")
    ax.set_title(f"{report.workload} @ {report.wire_width} bits")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    path = out_dir / f"ablate_{report.workload}_{report.wire_width}.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
