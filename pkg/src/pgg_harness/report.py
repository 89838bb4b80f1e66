"""Report artifacts: per-round curves, delta grids, sentiment correlation grids.

Each figure is drawn from the rows of the CSV written next to it, so the CSV
is the record and the SVG a view of it.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib as mpl
import numpy as np

from .analysis import (
    DeltaRow,
    delta_table,
    format_delta,
    per_round_stats,
    score_batch,
    sentiment_correlation,
)
from .errors import ConfigError, InsufficientData
from .game import Condition
from .gateway import Gateway
from .plotting import CONDITION_STYLE, PLAYER_COLORS, RC, new_figure, save_svg
from .runner import PERSONA_ORDER, BatchResult, load_transcripts, pairing_label

CURVE_COLUMNS = ("cell", "condition", "player", "round", "mean", "ci_half", "n")
DELTA_COLUMNS = ("study", "player", "pairing", "delta_mean", "p_value", "significant", "n_name", "n_noname")
SCORE_COLUMNS = ("game_id", "round", "player", "score", "masked_text", "raw_text", "judge_response")
CORR_COLUMNS = ("study", "condition", "player", "position", "pairing", "rho", "status", "n", "mode")
PAIRING_ORDER = tuple(
    pairing_label((a, b)) for a in PERSONA_ORDER for b in PERSONA_ORDER
) + tuple(p.letter for p in PERSONA_ORDER)

MODES = ("curves", "deltas", "sentiment")


def _num(x: float) -> str:
    return repr(float(x))


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in columns})
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_batches(paths: Sequence[str | Path]) -> list[BatchResult]:
    if not paths:
        raise ConfigError("no transcript files given")
    return [load_transcripts(p) for p in paths]


def _player_names(batch: BatchResult) -> list[str]:
    labels = [s.label for s in batch.cell.agent_specs]
    if len(set(labels)) == len(labels):
        return labels
    return [f"{lab} #{i + 1}" for i, lab in enumerate(labels)]


def _cell_key(batch: BatchResult) -> str:
    return f"study{batch.cell.study.number}__{batch.cell.label}"


def _pairing_sort(label: str) -> int:
    return PAIRING_ORDER.index(label) if label in PAIRING_ORDER else len(PAIRING_ORDER)


# --- curves -----------------------------------------------------------------


def curve_rows(batches: Sequence[BatchResult]) -> list[dict]:
    rows = []
    for b in batches:
        names = _player_names(b)
        for p in range(len(b.cell.agent_specs)):
            summary = per_round_stats(b, p)
            for s in summary.rows:
                rows.append({
                    "cell": _cell_key(b),
                    "condition": b.cell.condition.value,
                    "player": names[p],
                    "round": s.round,
                    "mean": _num(s.mean),
                    "ci_half": _num(s.ci_half),
                    "n": s.n,
                })
    return rows


def curves_figure(rows: Sequence[dict]):
    """One panel per cell; a line per (player, condition) with its 95% band."""
    cells = sorted({r["cell"] for r in rows}, key=lambda c: (c.split("__")[0], _pairing_sort(c.split("__")[1])))
    ncols = min(3, len(cells))
    nrows = math.ceil(len(cells) / ncols)
    with mpl.rc_context(RC):
        fig = new_figure(3.4 * ncols, 2.6 * nrows)
        axes = np.atleast_1d(fig.subplots(nrows, ncols, squeeze=False)).ravel()
        for ax, cell in zip(axes, cells):
            mine = [r for r in rows if r["cell"] == cell]
            players = list(dict.fromkeys(r["player"] for r in mine))
            for pi, player in enumerate(players):
                for cond in ("NoName", "Name"):
                    series = sorted(
                        (r for r in mine if r["player"] == player and r["condition"] == cond),
                        key=lambda r: int(r["round"]),
                    )
                    if not series:
                        continue
                    x = np.array([int(r["round"]) for r in series])
                    y = np.array([float(r["mean"]) for r in series])
                    h = np.array([float(r["ci_half"]) for r in series])
                    color = PLAYER_COLORS[pi % len(PLAYER_COLORS)]
                    ax.plot(x, y, CONDITION_STYLE[cond], color=color, label=f"{player} ({cond})")
                    ax.fill_between(x, y - h, y + h, color=color, alpha=0.18, linewidth=0)
            study, pairing = cell.split("__")
            ax.set_title(f"Study {study[-1]}, {pairing}")
            ax.set_xlabel("round")
            ax.set_ylabel("mean contribution")
            ax.set_ylim(-0.5, 10.5)
            ax.legend(loc="best")
        for ax in axes[len(cells):]:
            ax.set_visible(False)
    return fig


# --- deltas -----------------------------------------------------------------


def pair_conditions(batches: Sequence[BatchResult]) -> list[tuple[BatchResult, BatchResult]]:
    """Match each Name batch with the NoName batch of the same study, personas and players."""
    def key(b):
        return (b.cell.study, b.cell.personas, tuple(s.label for s in b.cell.agent_specs))

    name = {key(b): b for b in batches if b.cell.condition is Condition.NAME}
    noname = {key(b): b for b in batches if b.cell.condition is Condition.NO_NAME}
    return [(name[k], noname[k]) for k in name if k in noname]


def delta_rows(batches: Sequence[BatchResult]) -> list[DeltaRow]:
    rows = []
    for name_b, noname_b in pair_conditions(batches):
        rows.extend(delta_table(name_b, noname_b))
    return rows


def delta_csv_rows(rows: Sequence[DeltaRow]) -> list[dict]:
    return [{
        "study": r.study,
        "player": r.player,
        "pairing": r.pairing,
        "delta_mean": _num(r.delta_mean),
        "p_value": _num(r.p_value),
        "significant": "true" if r.significant else "false",
        "n_name": r.n_name,
        "n_noname": r.n_noname,
    } for r in rows]


def rows_from_delta_csv(records: Sequence[dict]) -> list[DeltaRow]:
    return [
        DeltaRow(r["study"], r["player"], r["pairing"], float(r["delta_mean"]), float(r["p_value"]),
                 r["significant"] == "true", int(r["n_name"]), int(r["n_noname"]))
        for r in records
    ]


def _grid(rows: Sequence[DeltaRow]) -> tuple[list[str], list[str], dict]:
    row_labels = list(dict.fromkeys(r.row_label for r in rows))
    cols = sorted({r.pairing for r in rows}, key=_pairing_sort)
    cells = {(r.row_label, r.pairing): r for r in rows}
    return row_labels, cols, cells


def deltas_markdown(rows: Sequence[DeltaRow]) -> str:
    row_labels, cols, cells = _grid(rows)
    lines = ["| Model | " + " | ".join(cols) + " |", "|---|" + "---|" * len(cols)]
    for lab in row_labels:
        vals = [format_delta(cells[(lab, c)]) if (lab, c) in cells else "" for c in cols]
        lines.append(f"| {lab} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def deltas_figure(rows: Sequence[DeltaRow]):
    """Table-shaped grid; statistically significant cells in bold."""
    row_labels, cols, cells = _grid(rows)
    with mpl.rc_context(RC):
        fig = new_figure(1.0 + 0.8 * len(cols), 0.6 + 0.35 * len(row_labels))
        ax = fig.add_subplot()
        ax.axis("off")
        text = [[format_delta(cells[(lab, c)], markup="plain") if (lab, c) in cells else "" for c in cols]
                for lab in row_labels]
        table = ax.table(cellText=text, rowLabels=row_labels, colLabels=cols, loc="center", cellLoc="center")
        table.auto_set_font_size(False)
        table.set_fontsize(8)
        for i, lab in enumerate(row_labels, start=1):
            for j, c in enumerate(cols):
                r = cells.get((lab, c))
                if r is not None and r.significant:
                    table[i, j].get_text().set_fontweight("bold")
    return fig


# --- sentiment --------------------------------------------------------------


def corr_rows(batches: Sequence[BatchResult], records, mode: str) -> list[dict]:
    out = []
    for b in batches:
        mine = [r for r in records if r.game_id.startswith(b.cell.slug + "#")]
        for c in sentiment_correlation(b, mine, mode=mode):
            out.append({
                "study": c.study,
                "condition": b.cell.condition.value,
                "player": c.player,
                "position": c.position,
                "pairing": c.pairing,
                "rho": "" if c.rho is None else _num(c.rho),
                "status": "no-variance" if c.rho is None else "ok",
                "n": c.n,
                "mode": mode,
            })
    return out


def sentiment_figure(rows: Sequence[dict]):
    """Heatmap of rho; undefined (no-variance) cells are left blank and marked n/a."""
    def row_key(r):
        return f"{r['player']} ({r['position']}, {r['condition']})"

    row_labels = sorted({row_key(r) for r in rows})
    cols = sorted({r["pairing"] for r in rows}, key=_pairing_sort)
    grid = np.full((len(row_labels), len(cols)), np.nan)
    for r in rows:
        if r["rho"] != "":
            grid[row_labels.index(row_key(r)), cols.index(r["pairing"])] = float(r["rho"])
    with mpl.rc_context(RC):
        fig = new_figure(1.8 + 0.7 * len(cols), 0.9 + 0.4 * len(row_labels))
        ax = fig.add_subplot()
        im = ax.imshow(np.ma.masked_invalid(grid), cmap="RdBu", vmin=-1, vmax=1, aspect="auto")
        ax.set_xticks(range(len(cols)), cols)
        ax.set_yticks(range(len(row_labels)), row_labels)
        for i in range(len(row_labels)):
            for j in range(len(cols)):
                v = grid[i, j]
                ax.text(j, i, "n/a" if np.isnan(v) else f"{v:.2f}", ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, label="Spearman rho")
    return fig


# --- entry point ------------------------------------------------------------


def cmd_report(
    paths: Sequence[str | Path],
    mode: str,
    out_dir: str | Path,
    *,
    judge: Gateway | None = None,
    judge_model: str = "gemini-2.5-flash",
    judge_provider: str = "gemini",
    spearman_mode: str = "raw",
) -> dict[str, Path]:
    """Write CSV tables and their SVG views for ``mode``; returns the written paths."""
    if mode not in MODES:
        raise ConfigError(f"unknown report mode {mode!r}")
    batches = load_batches(paths)
    out = Path(out_dir)
    written: dict[str, Path] = {}
    if mode == "curves":
        path = write_csv(out / "curves.csv", CURVE_COLUMNS, curve_rows(batches))
        written["csv"] = path
        written["svg"] = save_svg(curves_figure(read_csv(path)), out / "curves.svg")
    elif mode == "deltas":
        rows = delta_rows(batches)
        if not rows:
            raise InsufficientData("no Name/NoName batch pairs among the inputs")
        path = write_csv(out / "deltas.csv", DELTA_COLUMNS, delta_csv_rows(rows))
        from_csv = rows_from_delta_csv(read_csv(path))
        written["csv"] = path
        written["md"] = out / "deltas.md"
        written["md"].write_text(deltas_markdown(from_csv), encoding="utf-8")
        written["svg"] = save_svg(deltas_figure(from_csv), out / "deltas.svg")
    else:
        if judge is None:
            raise ConfigError("sentiment mode needs a judge gateway")
        scored = [b for b in batches if b.cell.study.wants_reasoning]
        if not scored:
            raise InsufficientData("sentiment mode needs Study1 transcripts (the only ones with reasoning)")
        records = []
        for b in scored:
            records.extend(score_batch(b, judge, model=judge_model, provider=judge_provider))
        written["scores"] = write_csv(out / "sentiment_scores.csv", SCORE_COLUMNS, (
            {"game_id": r.game_id, "round": r.round, "player": r.player, "score": _num(r.score),
             "masked_text": r.masked_text, "raw_text": r.raw_text, "judge_response": r.judge_response}
            for r in records
        ))
        path = write_csv(out / "sentiment_corr.csv", CORR_COLUMNS, corr_rows(scored, records, spearman_mode))
        written["csv"] = path
        written["svg"] = save_svg(sentiment_figure(read_csv(path)), out / "sentiment_corr.svg")
    return written


def render_from_csv(mode: str, csv_path: str | Path):
    """Rebuild a report figure from its CSV alone."""
    rows = read_csv(csv_path)
    if mode == "curves":
        return curves_figure(rows)
    if mode == "deltas":
        return deltas_figure(rows_from_delta_csv(rows))
    if mode == "sentiment":
        return sentiment_figure(rows)
    raise ConfigError(f"unknown report mode {mode!r}")
