"""Matplotlib rendering of gridworld verdicts.

Every grid cell is split into four triangles, one per agent orientation,
pointing in the direction the agent faces.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .engine import VerdictSets  # noqa: E402
from .report import RenderError  # noqa: E402

FACE = {"safe": "#2ca02c", "failure": "#d62728", "undetermined": "#1f77b4"}
CELL = {"#": "#3b3b3b", "L": "#ff7f0e", "G": "#98df8a"}

# triangle corners (relative to the cell's top-left corner) for E, S, W, N
TRIANGLES = (
    ((1, 0), (1, 1), (0.5, 0.5)),
    ((0, 1), (1, 1), (0.5, 0.5)),
    ((0, 0), (0, 1), (0.5, 0.5)),
    ((0, 0), (1, 0), (0.5, 0.5)),
)

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
})


def _check(render):
    if not render or render.get("kind") != "grid":
        raise RenderError("model has no grid render metadata; figures need a gridworld")


def plot_verdicts(verdicts: VerdictSets, render, title: str | None = None, sampled=(), ax=None):
    """Draw one verdict partition; states in ``sampled`` get a white outline."""
    _check(render)
    w, h = render["width"], render["height"]
    if ax is None:
        _, ax = plt.subplots(figsize=(0.45 * w + 1.5, 0.45 * h))
    for y, row in enumerate(render["rows"]):
        for x, c in enumerate(row):
            if c in CELL:
                ax.add_patch(plt.Rectangle((x, y), 1, 1, color=CELL[c], lw=0))
    polys, colors, edges = [], [], []
    sampled = set(sampled)
    for s, (x, y, o) in enumerate(render["positions"]):
        polys.append([(x + dx, y + dy) for dx, dy in TRIANGLES[o]])
        colors.append(FACE[verdicts.verdict_of(s)])
        edges.append("white" if s in sampled else "black")
    ax.add_collection(PolyCollection(polys, facecolors=colors, edgecolors=edges, linewidths=0.3))
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    ax.legend(handles=[Patch(color=FACE[k], label=k) for k in FACE],
              loc="center left", bbox_to_anchor=(1.01, 0.5), frameon=False)
    return ax


def save_verdict_figure(verdicts: VerdictSets, render, path: str | Path, title: str | None = None, sampled=()) -> Path:
    _check(render)
    fig, ax = plt.subplots(figsize=(0.45 * render["width"] + 1.8, 0.45 * render["height"]))
    plot_verdicts(verdicts, render, title, sampled, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)
