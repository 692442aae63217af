"""SVG figures for run and sweep results (matplotlib, Agg backend, reproducible output)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so identical data gives byte-identical files
plt.rcParams["svg.hashsalt"] = "ecn-lab"
plt.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def strategy_bar_chart(table, path, metric: str | None = None) -> None:
    """Mean score per strategy with std error bars, one group per dataset."""
    metric = metric or table.headline_metric()
    strategies = table.strategies()
    datasets = table.datasets()
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(strategies) * len(datasets)), 4))
    width = 0.8 / max(1, len(datasets))
    x = np.arange(len(strategies))
    for i, ds in enumerate(datasets):
        means, stds = [], []
        for s in strategies:
            vals = table.scores(s, metric, ds)
            means.append(np.mean(vals) if vals else 0.0)
            stds.append(np.std(vals) if len(vals) > 1 else 0.0)
        ax.bar(x + i * width, means, width, yerr=stds, label=ds, capsize=3)
    ax.set_xticks(x + width * (len(datasets) - 1) / 2)
    ax.set_xticklabels(strategies, rotation=30, ha="right")
    ax.set_ylabel(metric)
    ax.set_ylim(0, 1)
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def sweep_plot(result, metric: str, path) -> None:
    """ECN score along the sweep axis with the two baselines as horizontal lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ecn = [s for s in dict.fromkeys(p[1] for p in result.points) if s.startswith("ecn_")]
    for strategy in ecn:
        xs, ys = result.series(strategy, metric)
        ax.plot(xs, ys, marker="o", label=strategy)
    for strategy, style in (("corrupted_only", "--"), ("gold_only", ":")):
        if any(p[1] == strategy and p[2] == metric for p in result.points):
            ax.axhline(result.baseline(strategy, metric), linestyle=style, color="gray", label=strategy)
    ax.set_xlabel(result.axis)
    ax.set_ylabel(metric)
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
