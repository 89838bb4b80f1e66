"""Figure styling and reproducible SVG output.

Figures are built on bare :class:`matplotlib.figure.Figure` objects (no
pyplot state), and saved with a fixed hash salt and no timestamp so the same
numbers always produce the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib as mpl
from matplotlib.figure import Figure

CONDITION_STYLE = {"NoName": "-", "Name": "--"}
PLAYER_COLORS = ("#1b7f79", "#222222", "#c1502e", "#4a5fc1")

RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "svg.fonttype": "none",
    "svg.hashsalt": "pgg-harness",
}


def new_figure(width: float, height: float) -> Figure:
    with mpl.rc_context(RC):
        return Figure(figsize=(width, height), layout="constrained")


def svg_bytes(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with mpl.rc_context(RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def save_svg(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(svg_bytes(fig))
    return path
