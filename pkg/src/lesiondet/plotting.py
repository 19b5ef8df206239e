"""Figure rendering for evaluation reports and dataset statistics.

Figures are written straight to files (Agg backend, no display); the CLI
report commands call these when given a figure path, alongside their JSON
or CSV output.
"""

from __future__ import annotations

from .dataio import StatsReport
from .metrics import EvalReport


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_pr_curves(report: EvalReport, path) -> None:
    """One precision-recall panel with a line per IoU threshold."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for threshold in sorted(report.pr_curves):
        curve = report.pr_curves[threshold]
        ax.plot(curve.recall, curve.precision, lw=1.4, label=f"IoU {threshold:.2f}")
    ax.set_xlabel("recall")
    ax.set_ylabel("interpolated precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    title = "precision-recall"
    if report.ap is not None:
        title += f"  (AP {report.ap:.3f})"
    ax.set_title(title)
    if report.pr_curves:
        ax.legend(fontsize=7, ncol=2, loc="lower left")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ar_histogram(stats: StatsReport, path) -> None:
    """Bar chart of the area-ratio histogram with the small-object cutoff marked."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    edges = stats.ar_bin_edges
    labels = [f"[{edges[i]:g}, {edges[i + 1]:g})" for i in range(len(edges) - 1)]
    ax.bar(range(len(stats.ar_histogram)), stats.ar_histogram, width=0.8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=40, ha="right", fontsize=7)
    ax.set_xlabel("area ratio")
    ax.set_ylabel("instances")
    title = f"area-ratio distribution ({stats.n_instances} instances)"
    if stats.small_fraction is not None:
        title += f", {100 * stats.small_fraction:.1f}% at AR <= {stats.small_threshold:g}"
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
