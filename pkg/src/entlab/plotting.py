"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .training import histogram_edges  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_dynamics(records, path, title=None):
    """Top-10% error norm and truncated fraction against iteration."""
    it = np.array([r.iteration for r in records])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(it, [r.mean_top10pct_error_norm for r in records], lw=1.0, label="top-10% error norm")
        ax.axhline(np.sqrt(2.0), color="0.5", ls=":", lw=0.8)
        ax.set_xlabel("iteration")
        ax.set_ylabel("error norm")
        ax2 = ax.twinx()
        ax2.plot(it, [r.truncated_fraction for r in records], color="tab:red", lw=0.8,
                 alpha=0.7, label="truncated fraction")
        ax2.set_ylabel("truncated fraction")
        ax2.set_ylim(0, 1)
        lines = ax.get_lines()[:1] + ax2.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], loc="lower right")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_separation(nll, l2, noisy, path, bins=32):
    """Normalised clean/noisy histograms of loss and error norm, side by side."""
    noisy = np.asarray(noisy, dtype=bool)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.4))
        for ax, values, name in ((axes[0], nll, "negative log-likelihood"), (axes[1], l2, "error L2 norm")):
            edges = histogram_edges(values, bins)
            for mask, label, color in ((~noisy, "clean", "tab:blue"), (noisy, "noisy", "tab:red")):
                if mask.any():
                    w = np.full(mask.sum(), 1.0 / mask.sum())
                    ax.hist(values[mask], edges, weights=w, alpha=0.5, color=color, label=label)
            ax.set_xlabel(name)
            ax.set_ylabel("fraction of tokens")
            ax.legend()
        _save(fig, path)


def plot_sweep(rows, path, metric="token_accuracy"):
    """One line per strategy against noise rate / pruning fraction, a panel per noise kind."""
    kinds = list(dict.fromkeys(r.noise_kind for r in rows))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(kinds), figsize=(4.2 * len(kinds), 3.4), squeeze=False)
        for ax, kind in zip(axes[0], kinds):
            sub = [r for r in rows if r.noise_kind == kind]
            for strat in dict.fromkeys(r.strategy for r in sub):
                pts = sorted((r.rate_or_fraction, r.mean(metric)) for r in sub if r.strategy == strat)
                ax.plot(*zip(*pts), marker="o", ms=3, label=strat)
            ax.set_title(kind)
            ax.set_xlabel("rate / fraction")
            ax.set_ylabel(metric.replace("_", " "))
            ax.legend()
        _save(fig, path)
