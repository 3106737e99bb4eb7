"""Optional matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path, digest: str | None) -> Path:
    # no Software/creation stamps, so reruns are byte-identical
    meta = {"Software": None}
    if digest:
        meta["Description"] = f"manifest {digest}"
    fig.savefig(path, dpi=100, metadata=meta)
    plt.close(fig)
    return path


def comparison_figure(rows: Sequence[Mapping], path: Path, digest: str | None = None) -> Path:
    """Grouped bars of each protocol's ratios against the reference."""
    keys = [("success_vs_oracle", "success"), ("delay_vs_oracle", "delay"),
            ("transmissions_vs_oracle", "transmissions"), ("storage_vs_oracle", "storage")]
    names = [r["protocol"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / len(keys)
    x = np.arange(len(names))
    for k, (col, label) in enumerate(keys):
        vals = [r[col] if r.get(col) is not None else np.nan for r in rows]
        ax.bar(x + k * width, vals, width, label=label)
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(names)
    ax.set_ylabel("ratio to reference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path, digest)


def stability_figure(series: Mapping[str, Sequence[tuple[int, float]]], path: Path, digest: str | None = None) -> Path:
    by_gap: dict[int, list[float]] = {}
    for pts in series.values():
        for gap, score in pts:
            by_gap.setdefault(gap, []).append(score)
    gaps = sorted(by_gap)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if gaps:
        ax.boxplot([by_gap[g] for g in gaps], tick_labels=[str(g) for g in gaps])
    ax.set_xlabel("gap T (days)")
    ax.set_ylabel("profile similarity")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    return _save(fig, path, digest)


def encounter_figure(unique_fraction: Sequence[float], path: Path, digest: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(unique_fraction, bins=20, range=(0, 1))
    ax.set_xlabel("fraction of population encountered")
    ax.set_ylabel("users")
    fig.tight_layout()
    return _save(fig, path, digest)
