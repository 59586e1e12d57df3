"""Figure rendering for harness reports (written next to the CSV outputs)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_rgo_curve(
    queries: Sequence[int], mean_rgo: Sequence[float], path: str | Path
) -> None:
    """Mean RGO of the batch as a function of queries spent."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(queries, mean_rgo, lw=1.5)
    ax.set_xlabel("queries")
    ax.set_ylabel("mean RGO")
    ax.set_title("Attack progression")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep(
    param: str,
    values: Sequence[float],
    rgo_values: Sequence[float],
    path: str | Path,
) -> None:
    """RGO across one swept hyper-parameter."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(values, rgo_values, marker="o", lw=1.5)
    ax.set_xlabel(param)
    ax.set_ylabel("RGO")
    ax.set_title(f"RGO vs {param}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
