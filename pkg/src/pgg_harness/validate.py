"""Invariant checks over persisted transcripts."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable

from .errors import TranscriptIOError
from .game import GameTranscript
from .runner import load_transcripts


@dataclass(frozen=True)
class Violation:
    source: str
    game_index: int
    round: int | None
    kind: str
    message: str

    def __str__(self) -> str:
        where = f"game {self.game_index}" + (f", round {self.round}" if self.round is not None else "")
        return f"{self.source}: {where}: {self.kind}: {self.message}"


def check_transcript(t: GameTranscript, source: str = "") -> list[Violation]:
    cfg = t.config
    n, e, m = cfg.num_players, cfg.endowment, cfg.multiplier
    out: list[Violation] = []

    def add(r, kind, msg):
        out.append(Violation(source, t.game_index, r, kind, msg))

    if t.valid and len(t.rounds) != cfg.num_rounds:
        add(None, "round_count", f"{len(t.rounds)} rounds recorded, expected {cfg.num_rounds}")
    running = [Decimal(0)] * n
    for k, rec in enumerate(t.rounds, start=1):
        r = rec.round_index
        if r != k:
            add(r, "round_index", f"expected round {k}")
        if len(rec.contributions) != n or len(rec.gains) != n or len(rec.cumulative) != n:
            add(r, "shape", f"expected {n} entries per player list")
            if len(rec.cumulative) == n:
                running = list(rec.cumulative)  # resync so one bad round is one violation
            continue
        for i, c in enumerate(rec.contributions):
            if not 0 <= c <= e:
                add(r, "range", f"player {i} contributed {c}, outside [0, {e}]")
        if rec.total != sum(rec.contributions):
            add(r, "total", f"total {rec.total} != sum of contributions {sum(rec.contributions)}")
        expected = n * e + (m - 1) * rec.total
        if sum(rec.gains) != expected:
            add(r, "conservation", f"gains sum to {sum(rec.gains)}, expected {expected}")
        for i, g in enumerate(rec.gains):
            if g < 0:
                add(r, "negative_gain", f"player {i} gain {g} < 0")
        running = [a + g for a, g in zip(running, rec.gains)]
        for i, (have, want) in enumerate(zip(rec.cumulative, running)):
            if have != want:
                add(r, "cumulative", f"player {i} cumulative {have} != running sum {want}")
    return out


@dataclass
class ValidationReport:
    violations: list[Violation]
    file_errors: list[str]
    games_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations and not self.file_errors


def validate_paths(paths: Iterable[str | Path]) -> ValidationReport:
    paths = list(paths)
    if not paths:
        raise ValueError("no transcript files given")
    report = ValidationReport([], [])
    for path in paths:
        try:
            batch = load_transcripts(path)
        except TranscriptIOError as exc:
            report.file_errors.append(f"{path}: {type(exc).__name__}: {exc}")
            continue
        for t in batch.transcripts:
            report.games_checked += 1
            report.violations.extend(check_transcript(t, str(path)))
    return report
