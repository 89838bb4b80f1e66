"""System-prompt templates and per-round message rendering.

Templates live in ``templates/prompts`` as plain text, one file per
(study, persona, condition). Placeholders use :class:`string.Template`
syntax: ``${model_name}``, ``${rounds}``, ``${endowment}``, ``${multiplier}``.

Two Study 1 Name templates were printed with copy errors (a duplicated
opening sentence, a missing persona sentence). ``variant="corrected"`` (the
default) uses the repaired ``*.corrected.txt`` files; ``variant="printed"``
ships the text exactly as it was published.
"""

from __future__ import annotations

import hashlib
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from string import Template

from .errors import ConfigError
from .game import (
    DEFAULT_ENDOWMENT,
    DEFAULT_MULTIPLIER,
    DEFAULT_ROUNDS,
    TENTH,
    Condition,
    Persona,
    RoundRecord,
    StudyStyle,
)

VARIANTS = ("corrected", "printed")

# Player counts the templates are written for.
STUDY_PLAYERS = {StudyStyle.STUDY1: 2, StudyStyle.STUDY2: 2, StudyStyle.STUDY3: 4}

# Literal opponent framing each study's NoName templates use.
NO_NAME_FRAMING = {
    StudyStyle.STUDY1: "one other AI agent",
    StudyStyle.STUDY2: "another AI",
    StudyStyle.STUDY3: "three other AIs",
}

JUDGE_RUBRIC_VERSION = "v1"


def template_key(study: StudyStyle, persona: Persona, condition: Condition) -> str:
    return f"study{study.number}_{persona.value.lower()}_{condition.value.lower()}"


def _template_dir():
    return resources.files("pgg_harness") / "templates"


@lru_cache(maxsize=None)
def load_template(key: str, variant: str = "corrected") -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown prompt variant {variant!r}")
    d = _template_dir() / "prompts"
    if variant == "corrected":
        fixed = d / f"{key}.corrected.txt"
        if fixed.is_file():
            return fixed.read_text(encoding="utf-8")
    path = d / f"{key}.txt"
    if not path.is_file():
        raise ConfigError(f"no prompt template {key!r}")
    return path.read_text(encoding="utf-8")


def template_checksums() -> dict[str, str]:
    """sha256 of every shipped template file, keyed by file name."""
    out = {}
    for entry in sorted((_template_dir() / "prompts").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".txt"):
            out[entry.name] = hashlib.sha256(entry.read_bytes()).hexdigest()
    return out


def judge_rubric() -> str:
    return (_template_dir() / f"judge_rubric_{JUDGE_RUBRIC_VERSION}.txt").read_text(
        encoding="utf-8"
    ).strip()


def format_points(value: Decimal) -> str:
    if value == value.quantize(TENTH):
        return f"{value:.1f}"
    return str(value.normalize())


def build_system_prompt(
    study_style: StudyStyle | str,
    persona: Persona | str,
    condition: Condition | str,
    self_display_name: str | None = None,
    opponent_display_name: str | None = None,
    num_players: int | None = None,
    *,
    num_rounds: int = DEFAULT_ROUNDS,
    endowment: int = DEFAULT_ENDOWMENT,
    multiplier: Decimal | str = DEFAULT_MULTIPLIER,
    variant: str = "corrected",
) -> str:
    """Fill in the system prompt for one player.

    Under the Name condition the named opponent is always the player's own
    display name; passing a different ``opponent_display_name`` is an error.
    """
    study = StudyStyle(study_style)
    persona = Persona(persona)
    condition = Condition(condition)
    expected = STUDY_PLAYERS[study]
    if num_players is not None and num_players != expected:
        raise ConfigError(f"{study.value} prompts are written for {expected} players")
    name = ""
    if condition is Condition.NAME:
        if not self_display_name:
            raise ConfigError("the Name condition requires a display name")
        if opponent_display_name is not None and opponent_display_name != self_display_name:
            raise ConfigError(
                "under the Name condition the opponent is framed as the player itself"
            )
        name = self_display_name
    text = load_template(template_key(study, persona, condition), variant)
    return Template(text).substitute(
        model_name=name,
        rounds=num_rounds,
        endowment=endowment,
        multiplier=str(Decimal(str(multiplier))),
    )


def opponent_label(study: StudyStyle, condition: Condition, self_display_name: str) -> str:
    if Condition(condition) is Condition.NAME:
        return self_display_name
    return NO_NAME_FRAMING[StudyStyle(study)]


def rules_reminder(
    opponent: str,
    num_rounds: int = DEFAULT_ROUNDS,
    endowment: int = DEFAULT_ENDOWMENT,
    multiplier: Decimal | str = DEFAULT_MULTIPLIER,
) -> str:
    return (
        f"Reminder: you are playing a game with {opponent}. "
        f"Everyone started with 0 points and there are {num_rounds} rounds. "
        f"Each round, you receive {endowment} points and can contribute between 0 and "
        f"{endowment} of them to a common pool. The pool is multiplied by {multiplier} "
        "and divided evenly between everyone."
    )


def render_round_summary(
    record: RoundRecord,
    player_index: int,
    study_style: StudyStyle | str,
    reminder: str | None = None,
) -> str:
    """End-of-round message for one player.

    Study 1 restates the rules and the opponent ahead of the numbers, so a
    ``reminder`` is required there; the other studies never repeat them.
    """
    if not 0 <= player_index < len(record.contributions):
        raise IndexError(f"player_index {player_index} out of range")
    study = StudyStyle(study_style)
    summary = (
        f"Round {record.round_index} summary: the total contribution to the common pool "
        f"was {record.total} points. You received "
        f"{format_points(record.gains[player_index])} points this round. Your total "
        f"across all rounds is {format_points(record.cumulative[player_index])} points."
    )
    if study.repeats_rules:
        if reminder is None:
            raise ConfigError("Study1 summaries restate the rules; a reminder is required")
        return f"{reminder}\n{summary}"
    return summary


def render_round_request(round_index: int, num_rounds: int, study_style: StudyStyle | str) -> str:
    if StudyStyle(study_style).wants_reasoning:
        return (
            f"Round {round_index} of {num_rounds}. Give your reasoning, then your "
            "contribution, as a JSON object with the keys 'reasoning' and 'contribution'."
        )
    return (
        f"Round {round_index} of {num_rounds}. Give your contribution as a JSON object "
        "with the key 'contribution'."
    )


def render_retry(error: Exception, expects_reasoning: bool) -> str:
    keys = "'reasoning' and 'contribution'" if expects_reasoning else "'contribution'"
    return (
        f"Your previous response could not be used ({type(error).__name__}: {error}). "
        f"Respond again with only a valid JSON object with the keys {keys}."
    )
