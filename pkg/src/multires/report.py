"""Figure rendering for the reporting commands (profile, score, pretrain)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import CostReport, giga


def render_macs_figure(report: CostReport, path: str, title: str = "") -> None:
    """Stacked per-module bars across the duration sweep."""
    durations = list(report.config_durations_s)
    modules = sorted(report.per_module, key=lambda m: -report.module_totals[m])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    bottom = np.zeros(len(durations))
    cmap = plt.get_cmap("tab20")
    for i, module in enumerate(modules):
        values = np.array([giga(report.per_module[module].get(d, 0)) for d in durations])
        ax1.bar([str(d) for d in durations], values, bottom=bottom,
                label=module, color=cmap(i % 20))
        bottom += values
    ax1.set_xlabel("audio duration (s)")
    ax1.set_ylabel("GMACs")
    ax1.set_title(title or "multiply-accumulate cost by module")
    ax1.legend(fontsize=6, ncol=2)
    totals = [giga(report.module_totals[m]) for m in modules]
    ax2.barh(range(len(modules)), totals, color=[cmap(i % 20) for i in range(len(modules))])
    ax2.set_yticks(range(len(modules)))
    ax2.set_yticklabels(modules, fontsize=7)
    ax2.invert_yaxis()
    ax2.set_xlabel(f"GMACs over sweep (total {giga(report.grand_total):.1f}G)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(metrics_path: str, out_path: str) -> None:
    """Loss and masked-accuracy curves from a metrics log."""
    with open(metrics_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split("\t")
        rows = [line.strip().split("\t") for line in fh if line.strip()]
    if not rows:
        return
    cols = {name: [float(r[i]) for r in rows] for i, name in enumerate(header)}
    steps = cols["step"]
    loss_cols = [c for c in header if c.startswith("loss_")]
    acc_cols = [c for c in header if c.startswith("acc_")]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(steps, cols["loss_total"], label="total", color="black")
    for c in loss_cols:
        if c != "loss_total":
            ax1.plot(steps, cols[c], label=c.replace("loss_", ""), alpha=0.7)
    ax1.set_xlabel("step")
    ax1.set_ylabel("masked cross-entropy")
    ax1.legend(fontsize=8)
    for c in acc_cols:
        ax2.plot(steps, cols[c], label=c.replace("acc_", ""))
    ax2.set_xlabel("step")
    ax2.set_ylabel("masked accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_score_figure(per_task: dict[str, float], score: float, path: str) -> None:
    """Per-task normalized scores as a bar chart."""
    tasks = list(per_task)
    values = [per_task[t] for t in tasks]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(tasks, values, color="steelblue")
    ax.axhline(1.0, color="gray", linestyle=":", linewidth=1)
    ax.set_ylabel("normalized score")
    ax.set_title(f"benchmark score {score:.1f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
