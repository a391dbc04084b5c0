"""Figure rendering for CLI reports.

Figures are rendered headless to PNG next to the delimited data files.
Everything here is presentation only; core modules never import it.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ._fileio import atomic_write_bytes
from .lifetime import LifetimeCurve
from .occupancy import CountDistribution

#: Fixed metadata keeps PNG output byte-identical across runs.
_PNG_METADATA = {"Software": "nvmpuf"}
_DPI = 150


def _save(fig, path: str | Path) -> None:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def save_ops_figure(
    distributions: dict[str, CountDistribution], path: str | Path, title: str
) -> None:
    """Per-challenge operation-count pmfs, log-scaled probability axis."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, dist in distributions.items():
        ax.plot(np.arange(dist.support), dist.pmf, marker="o", markersize=3, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("operations per challenge")
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_lifetime_figure(curves: dict[str, LifetimeCurve], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, curve in curves.items():
        ax.plot(curve.challenge_grid, curve.p_dead, label=label)
    ax.axhline(0.5, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xscale("log")
    ax.set_xlabel("challenges")
    ax.set_ylabel("P(device dead)")
    ax.set_title("Device lifetime")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_histogram_figure(
    series: dict[str, np.ndarray], path: str | Path, xlabel: str, title: str
) -> None:
    """Bar histograms over bins 0..width (counts per Hamming weight/distance)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, counts in series.items():
        ax.bar(np.arange(counts.size), counts, alpha=0.6, label=label, width=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_attack_figure(
    rows: list[tuple[str, int, float]], path: str | Path
) -> None:
    """Accuracy vs training size, one line per dataset source."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    sources = sorted({source for source, _, _ in rows})
    for source in sources:
        xs = [size for s, size, _ in rows if s == source]
        ys = [acc for s, _, acc in rows if s == source]
        ax.plot(xs, ys, marker="o", label=source)
    ax.axhline(0.5, color="grey", linewidth=0.8, linestyle="--")
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("training CRPs")
    ax.set_ylabel("prediction accuracy")
    ax.set_title("Modeling-attack accuracy")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
