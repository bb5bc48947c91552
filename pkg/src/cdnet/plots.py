"""Matplotlib renderings of the delimited reports.

Every figure is derived from the same arrays the CSV writers emit, so the
PNGs are byte-reproducible for a fixed input (the Agg backend embeds no
timestamps). Colors follow the published style: dodger blue for ensemble /
negative-class series, dark orange for the mixture / positive-class series.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import Journey
from .evaluation import AleatoricReport, EnsembleReport, EpistemicReport, MetricsReport, RanScore

DPI = 120
BLUE = "dodgerblue"
ORANGE = "darkorange"


def _bar_pair(ax, edges, counts_a, label_a, counts_b, label_b):
    width = edges[1] - edges[0]
    centers = (edges[:-1] + edges[1:]) / 2.0
    ax.bar(centers, counts_a, width=width * 0.95, color=BLUE, alpha=0.6, label=label_a)
    ax.bar(centers, counts_b, width=width * 0.95, color=ORANGE, alpha=0.6, label=label_b)
    ax.set_xlim(0.0, 1.0)
    ax.legend(frameon=False)


def render_ensemble_comparison(
    path, ensemble: EnsembleReport, epistemic: EpistemicReport, journey_id: str
) -> None:
    """Overlaid ensemble-vs-mixture histograms of predicted mortality risk."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    # normalize to densities so head count and component count compare fairly
    ens = ensemble.hist_counts / max(ensemble.hist_counts.sum(), 1)
    epi = epistemic.hist_counts / max(epistemic.hist_counts.sum(), 1)
    _bar_pair(ax, ensemble.bin_edges, ens, "FFN ensemble", epi, "mixture components")
    ax.set_xlabel("predicted class-1 probability")
    ax.set_ylabel("fraction")
    ax.set_title(f"epistemic comparison, journey {journey_id}")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_aleatoric(path, report: AleatoricReport, journey_id: str) -> None:
    """Per-class histograms over noise draws; overlap printed in the title."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    _bar_pair(
        ax, report.bin_edges, report.hist_class0, "class 0", report.hist_class1, "class 1"
    )
    ax.set_xlabel("predicted probability")
    ax.set_ylabel("draws")
    ax.set_title(f"aleatoric draws, journey {journey_id} (overlap {report.overlap:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_ran_heatmap(
    path, journey: Journey, rows: list[RanScore], feature_names, max_steps: int = 20
) -> None:
    """Feature-by-time grid; imputed cells carry their attention score."""
    T = min(journey.T, max_steps)
    N = journey.n_features
    grid = np.full((N, T), np.nan)
    for r in rows:
        if r.t < T:
            grid[r.feature_index, r.t] = r.gamma
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * T + 1.5), 0.4 * N + 1.2))
    shown = np.ma.masked_invalid(grid)
    mesh = ax.pcolormesh(shown, cmap="YlOrRd", vmin=0.0, vmax=1.0, edgecolors="lightgray")
    for i in range(N):
        for t in range(T):
            if not np.isnan(grid[i, t]):
                ax.text(t + 0.5, i + 0.5, f"{grid[i, t]:.2f}", ha="center", va="center", fontsize=6)
    ax.set_yticks(np.arange(N) + 0.5, labels=list(feature_names)[:N], fontsize=7)
    ax.set_xticks(np.arange(T) + 0.5, labels=[str(t) for t in range(T)], fontsize=6)
    ax.set_xlabel("record index")
    ax.set_title(f"attention over imputed cells, journey {journey.patient_id}")
    fig.colorbar(mesh, ax=ax, label="weight")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_metrics(path, report: MetricsReport) -> None:
    """Per-seed metric scatter with mean(std) summary bars."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    for offset, (metric, color) in enumerate((("auroc", BLUE), ("auprc", ORANGE))):
        vals = np.asarray(getattr(report, metric))
        mean, std = report.mean_std(metric)
        ax.bar(offset, mean, yerr=std, width=0.6, color=color, alpha=0.7, capsize=4)
        ax.plot(np.full(len(vals), offset), vals, "k.", markersize=4)
    ax.set_xticks([0, 1], labels=["AUROC", "AUPRC"])
    ax.set_ylim(0.0, 1.0)
    ax.set_title(report.task)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
