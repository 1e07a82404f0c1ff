"""Small matplotlib helpers: every report CSV gets a rendered PNG next to it."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_lines"]


def render_lines(path, x, series: dict, xlabel: str, ylabel: str,
                 title: str = "") -> None:
    """Render named series to a PNG file. Each series is either a y array on
    the common x axis, or an (x, y) pair with its own axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    for name, y in series.items():
        if isinstance(y, tuple):
            ax.plot(y[0], y[1], lw=1.2, label=name)
        else:
            ax.plot(x, y, lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
