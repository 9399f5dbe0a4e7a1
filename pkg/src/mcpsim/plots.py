"""Figure rendering for the CLI report paths (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .accounting import MetricsRow
from .presenter import TraceEvent

MODE_COLORS = {
    "dynamic": "#d62728",
    "static": "#1f77b4",
    "random": "#7f7f7f",
    "none": "#2ca02c",
}


def render_run_summary(rows: list[MetricsRow], path: str | Path) -> None:
    """Latency histogram plus per-task quality for one run."""
    latencies = [r.t_total_ms for r in rows]
    qualities = [r.quality for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.hist(latencies, bins=40, color="#1f77b4", alpha=0.85)
    ax1.set_xlabel("task latency (ms)")
    ax1.set_ylabel("tasks")
    ax1.set_title("latency distribution")
    ax2.hist(qualities, bins=40, color="#d62728", alpha=0.85)
    ax2.set_xlabel("task quality")
    ax2.set_ylabel("tasks")
    ax2.set_title("quality distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(telemetry: list[dict], path: str | Path) -> None:
    """Reward and critic-loss trajectories over training steps."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    if telemetry:
        steps = [row["step"] for row in telemetry]
        ax1.plot(steps, [row["reward"] for row in telemetry], color="#d62728")
        ax2.plot(
            steps,
            [row["critic1_loss"] for row in telemetry],
            label="critic 1",
            color="#1f77b4",
        )
        ax2.plot(
            steps,
            [row["critic2_loss"] for row in telemetry],
            label="critic 2",
            color="#7f7f7f",
        )
        ax2.legend()
    ax1.set_xlabel("step")
    ax1.set_ylabel("mean recent reward")
    ax1.set_title("training reward")
    ax2.set_xlabel("step")
    ax2.set_ylabel("loss")
    ax2.set_title("critic losses")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation(summaries: dict[str, dict], path: str | Path) -> None:
    """Grouped bars of quality / latency / energy across routing modes."""
    modes = list(summaries)
    metrics = (
        ("mean_quality", "quality"),
        ("mean_latency_ms", "latency (ms)"),
        ("energy_per_task_j", "energy (J/task)"),
    )
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, (key, label) in zip(axes, metrics):
        values = [summaries[m][key] for m in modes]
        ax.bar(modes, values, color=[MODE_COLORS.get(m, "#333") for m in modes])
        ax.set_title(label)
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_case_activation(trace: list[TraceEvent], path: str | Path) -> None:
    """Stacked per-phase activation bars for a case replay."""
    kinds = ("reasoning", "generation", "retrieval")
    colors = ("#1f77b4", "#d62728", "#2ca02c")
    labels = [f"t{e.step + 1}\n{e.phase}" for e in trace]
    bottoms = np.zeros(len(trace))
    fig, ax = plt.subplots(figsize=(max(6, 2 * len(trace)), 4.5))
    for kind, color in zip(kinds, colors):
        values = np.array([e.activation_pct.get(kind, 0.0) for e in trace])
        ax.bar(labels, values, bottom=bottoms, color=color, label=kind)
        bottoms += values
    ax.set_ylabel("activation (%)")
    ax.set_ylim(0, 105)
    ax.legend(loc="upper right")
    ax.set_title("module activation by phase")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
