"""Statistics over transcripts: per-round bands, name/no-name deltas, masking,
sentiment scoring, and Spearman correlation."""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import InsufficientData, JudgeUnparseable, ShapeMismatch, ValidationError
from .game import GameTranscript
from .gateway import ChatRequest, Gateway
from .prompts import judge_rubric
from .runner import BatchResult

Z95 = 1.96
ALPHA = 0.05
JUDGE_TEMPERATURE = 0.1
MASK_REPLACEMENT = "the other player"

# Model names masked in every reasoning trace, whatever the run's own agents were.
KNOWN_MODEL_NAMES = (
    "GPT-4o",
    "Claude Sonnet 4",
    "Sonnet 4",
    "Llama 4 Maverick",
    "Llama 4",
    "Qwen3 235B A22B 2507",
    "Qwen3-235B-A22B-2507",
    "Qwen3-235B-A22B",
    "Qwen3",
)


# --- per-round bands --------------------------------------------------------


@dataclass(frozen=True)
class RoundStat:
    round: int
    mean: float
    ci_half: float
    n: int


@dataclass(frozen=True)
class StatsSummary:
    player: int
    player_label: str
    cell: str
    condition: str
    rows: tuple[RoundStat, ...]


def _valid(transcripts: Iterable[GameTranscript]) -> list[GameTranscript]:
    return [t for t in transcripts if t.valid]


def per_round_stats(
    transcripts: Sequence[GameTranscript] | BatchResult,
    player: int,
    *,
    method: str = "normal",
    n_boot: int = 2000,
    seed: int = 0,
    label: str = "",
    player_label: str = "",
) -> StatsSummary:
    """Mean contribution per round with a 95% band across games.

    ``method="normal"``: half-width ``1.96 * s / sqrt(n)`` with the sample
    standard deviation. ``method="bootstrap"``: half the width of the
    percentile interval of resampled means.
    """
    cell_label = label
    condition = ""
    if isinstance(transcripts, BatchResult):
        cell_label = label or transcripts.cell.label
        condition = transcripts.cell.condition.value
        player_label = player_label or transcripts.cell.agent_specs[player].label
        transcripts = transcripts.transcripts
    games = _valid(transcripts)
    if len(games) < 2:
        raise InsufficientData(f"need at least 2 valid games, got {len(games)}")
    num_rounds = min(len(t.rounds) for t in games)
    data = np.array(
        [[t.rounds[r].contributions[player] for r in range(num_rounds)] for t in games],
        dtype=float,
    )
    n = data.shape[0]
    rows = []
    rng = np.random.default_rng(seed)
    for r in range(num_rounds):
        col = data[:, r]
        mean = float(col.mean())
        if method == "normal":
            half = Z95 * float(col.std(ddof=1)) / math.sqrt(n)
        elif method == "bootstrap":
            boots = rng.choice(col, size=(n_boot, n), replace=True).mean(axis=1)
            lo, hi = np.percentile(boots, [2.5, 97.5])
            half = float(hi - lo) / 2
        else:
            raise ValueError(f"unknown CI method {method!r}")
        rows.append(RoundStat(r + 1, mean, half, n))
    return StatsSummary(player, player_label, cell_label, condition, tuple(rows))


# --- name vs no-name deltas -------------------------------------------------


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Two-sided unequal-variance t-test.

    With zero variance on both sides the test degenerates: p is 0 when the
    means differ and 1 when they agree.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientData("Welch's test needs at least 2 observations per group")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        same = ma == mb
        return WelchResult(0.0 if same else math.copysign(math.inf, ma - mb), math.nan, 1.0 if same else 0.0)
    t = (ma - mb) / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2 * float(sps.t.sf(abs(t), df))
    return WelchResult(float(t), float(df), min(1.0, p))


@dataclass(frozen=True)
class DeltaRow:
    study: str
    player: str
    pairing: str
    delta_mean: float
    p_value: float
    significant: bool
    n_name: int = 0
    n_noname: int = 0

    @property
    def row_label(self) -> str:
        return f"Study {self.study[-1]}, {self.player}"


def per_game_means(transcripts: Iterable[GameTranscript], player: int) -> list[Fraction]:
    out = []
    for t in _valid(transcripts):
        if not t.rounds:
            continue
        out.append(Fraction(sum(r.contributions[player] for r in t.rounds), len(t.rounds)))
    return out


def _mean(xs: Sequence[Fraction]) -> Fraction:
    return sum(xs, Fraction(0)) / len(xs)


def delta_table(name_batch: BatchResult, noname_batch: BatchResult, alpha: float = ALPHA) -> list[DeltaRow]:
    """One row per player: name-condition mean minus no-name mean.

    The test unit is the per-game mean contribution; significance comes from
    Welch's two-sided t-test at ``alpha``.
    """
    a, b = name_batch.cell, noname_batch.cell
    shape_a = (a.study, a.personas, tuple(s.label for s in a.agent_specs))
    shape_b = (b.study, b.personas, tuple(s.label for s in b.agent_specs))
    if shape_a != shape_b:
        raise ShapeMismatch(f"cells differ: {shape_a} vs {shape_b}")
    rows = []
    for i, spec in enumerate(a.agent_specs):
        xs = per_game_means(name_batch.transcripts, i)
        ys = per_game_means(noname_batch.transcripts, i)
        res = welch_t_test([float(x) for x in xs], [float(y) for y in ys])
        delta = float(_mean(xs) - _mean(ys))
        rows.append(
            DeltaRow(
                study=a.study.value,
                player=spec.label if len(set(s.label for s in a.agent_specs)) == len(a.agent_specs)
                else f"{spec.label} #{i + 1}",
                pairing=a.label,
                delta_mean=delta,
                p_value=res.p_value,
                significant=res.p_value < alpha,
                n_name=len(xs),
                n_noname=len(ys),
            )
        )
    return rows


def format_delta(row: DeltaRow, markup: str = "markdown") -> str:
    """Delta to three decimals; significant cells are bolded."""
    text = f"{row.delta_mean:.3f}"
    if row.significant:
        return f"**{text}**" if markup == "markdown" else text
    return text


# --- Spearman ---------------------------------------------------------------


def average_ranks(xs: Sequence[float]) -> list[Fraction]:
    """1-based ranks; tied values share the mean of the positions they occupy."""
    return [Fraction(r, 2) for r in _rank_data(xs)[0]]


def _rank_data(xs: Sequence[float]) -> tuple[list[int], int]:
    """Doubled average ranks plus the tie sum ``sum(t^3 - t)`` over tie groups.

    A value occupying sorted positions i..j (0-based) has average rank
    (i + j + 2) / 2, so doubled ranks are always integers.
    """
    first: dict[float, int] = {}
    last: dict[float, int] = {}
    for i, v in enumerate(sorted(xs)):
        if v not in first:
            first[v] = i
        last[v] = i
    ties = 0
    for v, i in first.items():
        t = last[v] - i + 1
        ties += t * t * t - t
    return [first[v] + last[v] + 2 for v in xs], ties


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Tie-corrected Spearman coefficient.

    Uses the closed form ``(Sx + Sy - sum d^2) / (2 sqrt(Sx Sy))`` with
    ``Sx = (n^3 - n)/12 - sum (t^3 - t)/12`` over tie groups. Everything is
    scaled to integers (ranks doubled, sums times 12) so rounding happens only
    in the last division and square root. Returns ``None`` when either side has no variance (the
    coefficient is undefined there, not zero).
    """
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise InsufficientData("spearman needs at least 2 pairs")
    base = n**3 - n
    rx, tx = _rank_data(xs)
    ry, ty = _rank_data(ys)
    sx = base - tx  # 12 * Sx
    sy = base - ty
    if sx == 0 or sy == 0:
        return None
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))  # 4 * sum d^2
    num = sx + sy - 3 * d2  # 12 * numerator
    if num == 0:
        return 0.0
    # int / int true division is correctly rounded, so this is the only rounding before sqrt.
    rho = math.copysign(math.sqrt(num * num / (4 * sx * sy)), num)
    return max(-1.0, min(1.0, rho))


# --- masking ----------------------------------------------------------------

_STOPWORDS_RE = re.compile(r"(?<!\w)(?:AIs?|models?)(?!\w)", re.IGNORECASE)
_SPACES_RE = re.compile(r"[ \t]{2,}")


def _names_regex(names: Iterable[str]) -> re.Pattern | None:
    uniq = sorted({n.strip() for n in names if n and n.strip()}, key=lambda s: (-len(s), s))
    if not uniq:
        return None
    alt = "|".join(re.escape(n) for n in uniq)
    return re.compile(rf"(?<!\w)(?:{alt})(?!\w)", re.IGNORECASE)


def mask_reasoning(text: str, display_names: Iterable[str] = (), *, include_known: bool = True) -> str:
    """Replace model names with "the other player" and drop "AI"/"model(s)".

    Applied until nothing changes, so the result is always a fixed point.
    """
    names = list(display_names) + (list(KNOWN_MODEL_NAMES) if include_known else [])
    # A name found inside the replacement itself could never be masked away.
    names = [n for n in names if not (_names_regex([n]) and _names_regex([n]).search(MASK_REPLACEMENT))]
    names_re = _names_regex(names)
    prev = None
    out = text
    while out != prev:
        prev = out
        if names_re is not None:
            out = names_re.sub(MASK_REPLACEMENT, out)
        out = _STOPWORDS_RE.sub("", out)
        out = _SPACES_RE.sub(" ", out)
        out = "\n".join(line.strip(" \t") for line in out.split("\n"))
    return out


# --- sentiment --------------------------------------------------------------

_SCORE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?|\.\d+)\s*$")


@dataclass(frozen=True)
class SentimentRecord:
    game_id: str
    round: int
    player: int
    masked_text: str
    score: float
    raw_text: str = ""
    judge_response: str = ""


def parse_score(reply: str) -> float | None:
    m = _SCORE_RE.match(reply)
    if not m:
        return None
    value = float(m.group(1))
    return value if 0.0 <= value <= 1.0 else None


def score_sentiment(
    masked_text: str,
    judge: Gateway,
    *,
    model: str = "gemini-2.5-flash",
    provider: str = "gemini",
    display_names: Iterable[str] = (),
    game_id: str = "",
    round: int = 0,
    player: int = 0,
    raw_text: str = "",
    retries: int = 2,
) -> SentimentRecord:
    """Ask the judge model for a cooperativeness score in [0, 1].

    The input must already be masked. Unusable judge replies are re-prompted
    up to ``retries`` times before :class:`JudgeUnparseable` is raised.
    """
    names = list(display_names)
    if mask_reasoning(masked_text, names) != masked_text:
        raise ValidationError("text passed to the judge is not masked")
    messages: list[tuple[str, str]] = [("system", judge_rubric()), ("user", masked_text)]
    reply = ""
    for _ in range(retries + 1):
        reply = judge.chat_complete(
            ChatRequest(model=model, messages=tuple(messages), temperature=JUDGE_TEMPERATURE, provider=provider)
        )
        score = parse_score(reply)
        if score is not None:
            return SentimentRecord(game_id, round, player, masked_text, score, raw_text or masked_text, reply)
        messages += [("assistant", reply), ("user", "Reply with only a single number between 0 and 1.")]
    raise JudgeUnparseable(f"judge reply {reply!r} is not a number in [0, 1]")


def game_id(batch: BatchResult, transcript: GameTranscript) -> str:
    return f"{batch.cell.slug}#{transcript.game_index}"


def score_batch(
    batch: BatchResult,
    judge: Gateway,
    *,
    model: str = "gemini-2.5-flash",
    provider: str = "gemini",
) -> list[SentimentRecord]:
    """Score every stored reasoning trace of a batch's valid games."""
    names = [s.label for s in batch.cell.agent_specs]
    out = []
    for t in batch.valid_transcripts:
        gid = game_id(batch, t)
        for r, per_player in enumerate(t.reasoning, start=1):
            for p, text in enumerate(per_player):
                if not text:
                    continue
                masked = mask_reasoning(text, names)
                out.append(
                    score_sentiment(masked, judge, model=model, provider=provider, display_names=names,
                                    game_id=gid, round=r, player=p, raw_text=text)
                )
    return out


@dataclass(frozen=True)
class CorrelationCell:
    study: str
    player: str
    position: str
    pairing: str
    rho: float | None
    n: int


def sentiment_correlation(
    batch: BatchResult,
    records: Sequence[SentimentRecord],
    *,
    mode: str = "raw",
) -> list[CorrelationCell]:
    """Spearman between sentiment and contribution, per player of a batch.

    ``mode="raw"`` pairs every scored (game, round) with its contribution;
    ``mode="averaged"`` first averages both per round across games.
    """
    contrib = {}
    for t in batch.valid_transcripts:
        gid = game_id(batch, t)
        for rec in t.rounds:
            for p, c in enumerate(rec.contributions):
                contrib[(gid, rec.round_index, p)] = c
    out = []
    for p, spec in enumerate(batch.cell.agent_specs):
        scored = [(r.round, r.score, contrib[(r.game_id, r.round, p)])
                  for r in records if r.player == p and (r.game_id, r.round, p) in contrib]
        pairs = [(s, c) for _, s, c in scored]
        if mode == "averaged":
            by_round: dict[int, list[tuple[float, int]]] = defaultdict(list)
            for rnd, s, c in scored:
                by_round[rnd].append((s, c))
            pairs = [
                (float(np.mean([s for s, _ in v])), float(np.mean([c for _, c in v])))
                for _, v in sorted(by_round.items())
            ]
        elif mode != "raw":
            raise ValueError(f"unknown mode {mode!r}")
        rho = spearman([a for a, _ in pairs], [b for _, b in pairs]) if len(pairs) >= 2 else None
        out.append(
            CorrelationCell(
                study=batch.cell.study.value,
                player=spec.label,
                position="1st" if p == 0 else "2nd" if p == 1 else f"#{p + 1}",
                pairing=batch.cell.label,
                rho=rho,
                n=len(pairs),
            )
        )
    return out
