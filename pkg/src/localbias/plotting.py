"""Figure rendering for bias sweeps and local-share histograms.

All figures are written as SVG next to the delimited outputs they
illustrate. The backend is forced to Agg so rendering works headless.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bias import AggregateRow
from .locality import LocalHistogram

_MODEL_MARKERS = {"itemknn": "o", "neumf": "s"}
_POLICY_STYLES = {"exclude": "-", "count_as_nonlocal": "--"}


def _slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", value)


def bias_figures(rows: Sequence[AggregateRow], out_dir) -> list[Path]:
    """One panel per (dataset, variant, source): mean bias vs K.

    Lines are (country, model, policy) series with a +-1 std band.
    Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panels: dict[tuple[str, str, str], list[AggregateRow]] = {}
    for r in rows:
        panels.setdefault((r.dataset, r.variant, r.source), []).append(r)
    paths = []
    for (dataset, variant, source) in sorted(panels):
        series: dict[tuple[str, str, str], list[AggregateRow]] = {}
        for r in panels[(dataset, variant, source)]:
            series.setdefault((r.country, r.model, r.policy), []).append(r)
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        all_ks: set[int] = set()
        for (country, model, policy) in sorted(series):
            pts = sorted(series[(country, model, policy)], key=lambda r: r.k)
            ks = np.array([p.k for p in pts])
            all_ks.update(p.k for p in pts)
            means = np.array([p.mean for p in pts])
            stds = np.array([0.0 if p.std is None else p.std for p in pts])
            ax.plot(
                ks,
                means,
                marker=_MODEL_MARKERS.get(model, "x"),
                linestyle=_POLICY_STYLES.get(policy, "-"),
                markersize=3,
                linewidth=1.2,
                label=f"{country} {model} ({policy})",
            )
            ax.fill_between(ks, means - stds, means + stds, alpha=0.15)
        ax.axhline(0.0, color="0.4", linewidth=0.8, label="No bias")
        ax.set_xticks(sorted(all_ks))
        ax.tick_params(axis="x", labelsize=7)
        ax.set_xlabel("list length K")
        ax.set_ylabel("bias (recommended minus listened local share)")
        ax.set_title(f"{dataset}: {variant} training, {source} labels")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out / f"bias_{_slug(dataset)}_{_slug(variant)}_{_slug(source)}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def histogram_figures(histograms: Sequence[LocalHistogram], out_dir) -> list[Path]:
    """One bar chart per histogram. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for h in histograms:
        width = 1.0 / h.bins
        centers = np.arange(h.bins) * width + width / 2.0
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        ax.bar(centers, h.counts, width=width * 0.92, color="#4878a8")
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("local share of streams")
        ax.set_ylabel("users")
        suffix = f" ({h.undefined} undefined)" if h.undefined else ""
        ax.set_title(f"{h.country}, {h.source.value}, {h.policy.value}{suffix}", fontsize=9)
        ax.grid(alpha=0.3, axis="y")
        fig.tight_layout()
        path = out / (
            f"hist_{_slug(h.country)}_{_slug(h.source.value)}_{_slug(h.policy.value)}.svg"
        )
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
