"""PNG figures from reports (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402


def cdf_points(report: MetricsReport) -> tuple[list[int], list[float]]:
    xs, ys, seen = [], [], 0
    total = sum(report.histogram.values())
    for lat, cnt in sorted(report.histogram.items()):
        seen += cnt
        xs.append(lat)
        ys.append(seen / total)
    return xs, ys


def plot_cdf(reports: Sequence[MetricsReport], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r in reports:
        xs, ys = cdf_points(r)
        label = r.pipeline if r.scenario != "pingpong" else r.extra.get("mode", r.pipeline)
        if r.extra.get("interval_cycles"):
            label += f" ({r.extra['interval_cycles']})"
        ax.step(xs, ys, where="post", label=label)
    ax.set_xlabel("latency (ns)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.01)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(xs: Sequence, series: dict[str, Sequence[float]], path: str | Path, xlabel: str,
               ylabel: str, title: str = "", logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, ys in series.items():
        ax.plot(list(xs), list(ys), marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
