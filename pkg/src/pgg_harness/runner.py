"""Condition matrices, seeded game batches, and transcript persistence."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Sequence

from .agents import AgentSpec, build_agents
from .errors import ConfigError, CorruptLine, SchemaVersionMismatch, TranscriptIOError
from .game import (
    DEFAULT_ENDOWMENT,
    DEFAULT_MULTIPLIER,
    DEFAULT_ROUNDS,
    Condition,
    GameConfig,
    GameTranscript,
    Persona,
    RoundRecord,
    StudyStyle,
    play_game,
)
from .gateway import Gateway
from .prompts import STUDY_PLAYERS
from .seeding import derive_seed

SCHEMA_VERSION = 1
PERSONA_ORDER = (Persona.COLLECTIVE, Persona.NEUTRAL, Persona.SELFISH)
DEFAULT_GAMES = {StudyStyle.STUDY1: 100, StudyStyle.STUDY2: 100, StudyStyle.STUDY3: 50}


def pairing_label(personas: Iterable[Persona]) -> str:
    """``CS`` for Collective-Selfish; homogeneous Study 3 cells collapse to one letter."""
    letters = [Persona(p).letter for p in personas]
    if len(letters) > 2 and len(set(letters)) == 1:
        return letters[0]
    return "".join(letters)


@dataclass(frozen=True)
class ConditionCell:
    study: StudyStyle
    personas: tuple[Persona, ...]
    condition: Condition
    agent_specs: tuple[AgentSpec, ...]
    games: int
    num_rounds: int = DEFAULT_ROUNDS
    endowment: int = DEFAULT_ENDOWMENT
    multiplier: Decimal = DEFAULT_MULTIPLIER

    def __post_init__(self) -> None:
        object.__setattr__(self, "study", StudyStyle(self.study))
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "personas", tuple(Persona(p) for p in self.personas))
        object.__setattr__(self, "multiplier", Decimal(str(self.multiplier)))
        specs = tuple(s.with_persona(p) for s, p in zip(self.agent_specs, self.personas))
        object.__setattr__(self, "agent_specs", specs)
        n = STUDY_PLAYERS[self.study]
        if len(self.personas) != n or len(self.agent_specs) != n:
            raise ConfigError(f"{self.study.value} cells need exactly {n} players")
        if self.study is StudyStyle.STUDY3:
            if len(set(self.personas)) != 1:
                raise ConfigError("Study3 gives every player the same persona")
            if not all(s.same_player(self.agent_specs[0]) for s in self.agent_specs):
                raise ConfigError("Study3 players must be copies of one agent")

    @property
    def label(self) -> str:
        return pairing_label(self.personas)

    @property
    def slug(self) -> str:
        return f"study{self.study.number}__{self.label}__{self.condition.value.lower()}"

    def config(self, seed: int = 0) -> GameConfig:
        return GameConfig(
            num_players=len(self.personas),
            num_rounds=self.num_rounds,
            endowment=self.endowment,
            multiplier=self.multiplier,
            condition=self.condition,
            personas=self.personas,
            study_style=self.study,
            games=self.games,
            seed=seed,
        )

    def descriptor(self) -> dict[str, Any]:
        return {
            "study": self.study.value,
            "personas": [p.value for p in self.personas],
            "pairing": self.label,
            "condition": self.condition.value,
            "games": self.games,
            "num_rounds": self.num_rounds,
            "endowment": self.endowment,
            "multiplier": self.multiplier,
            "agents": [s.to_dict() for s in self.agent_specs],
        }

    @classmethod
    def from_descriptor(cls, d: dict[str, Any]) -> ConditionCell:
        return cls(
            study=StudyStyle(d["study"]),
            personas=tuple(Persona(p) for p in d["personas"]),
            condition=Condition(d["condition"]),
            agent_specs=tuple(AgentSpec.from_dict(a) for a in d["agents"]),
            games=int(d["games"]),
            num_rounds=int(d["num_rounds"]),
            endowment=int(d["endowment"]),
            multiplier=Decimal(str(d["multiplier"])),
        )


def enumerate_conditions(
    study_style: StudyStyle | str,
    agent_pairing: Sequence[AgentSpec],
    *,
    games: int | None = None,
    pairings: Iterable[str] | None = None,
    conditions: Iterable[Condition | str] | None = None,
    num_rounds: int = DEFAULT_ROUNDS,
    endowment: int = DEFAULT_ENDOWMENT,
    multiplier: Decimal | str = DEFAULT_MULTIPLIER,
) -> list[ConditionCell]:
    """All (persona ordering x condition) cells for a study.

    Studies 1-2 give 9 orderings x 2 conditions; Study 3 gives 3 homogeneous
    personas x 2 conditions. A single spec is replicated for Study 3.
    ``pairings`` (labels like ``"CS"``) and ``conditions`` narrow the matrix.
    """
    study = StudyStyle(study_style)
    n = STUDY_PLAYERS[study]
    specs = tuple(agent_pairing)
    if study is StudyStyle.STUDY3 and len(specs) == 1:
        specs = specs * n
    if len(specs) != n:
        raise ConfigError(f"{study.value} needs {n} agent specs, got {len(specs)}")
    if study is StudyStyle.STUDY3:
        orderings = [(p,) * n for p in PERSONA_ORDER]
    else:
        orderings = list(itertools.product(PERSONA_ORDER, repeat=n))
    if pairings is not None:
        wanted = [w.upper() for w in pairings]
        known = {pairing_label(o): o for o in orderings}
        known.update({"".join(p.letter for p in o): o for o in orderings})
        for w in wanted:
            if w not in known:
                if study is StudyStyle.STUDY3 and len(w) == n and set(w) <= set("CNS"):
                    raise ConfigError(f"Study3 gives every player the same persona; got {w!r}")
                raise ConfigError(f"unknown pairing {w!r} for {study.value}")
        orderings = list(dict.fromkeys(known[w] for w in wanted))
    conds = [Condition(c) for c in (conditions or (Condition.NO_NAME, Condition.NAME))]
    g = games if games is not None else DEFAULT_GAMES[study]
    return [
        ConditionCell(study, o, c, specs, g, num_rounds, endowment, Decimal(str(multiplier)))
        for o in orderings
        for c in conds
    ]


@dataclass
class BatchResult:
    cell: ConditionCell
    transcripts: list[GameTranscript] = field(default_factory=list)
    invalid_count: int = 0

    @property
    def valid_transcripts(self) -> list[GameTranscript]:
        return [t for t in self.transcripts if t.valid]


def run_batch(
    cell: ConditionCell,
    master_seed: int,
    parallelism: int = 1,
    gateway: Gateway | None = None,
    *,
    prompt_variant: str = "corrected",
) -> BatchResult:
    """Play ``cell.games`` independent games; game ``i`` is seeded with ``derive_seed(master_seed, i)``."""
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    config = cell.config(master_seed)

    def one(index: int) -> GameTranscript:
        seed = derive_seed(master_seed, index)
        agents = build_agents(config, cell.agent_specs, gateway=gateway, game_seed=seed,
                              prompt_variant=prompt_variant)
        return play_game(config, agents, game_seed=seed, game_index=index)

    if parallelism == 1:
        transcripts = [one(i) for i in range(cell.games)]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            transcripts = list(pool.map(one, range(cell.games)))
    return BatchResult(cell, transcripts, sum(not t.valid for t in transcripts))


# --- persistence ------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, Decimal):
        return float(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def transcript_to_record(t: GameTranscript, cell: ConditionCell) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "cell": cell.descriptor(),
        "game_index": t.game_index,
        "game_seed": t.game_seed,
        "master_seed": t.config.seed,
        "valid": t.valid,
        "error": t.error,
        "agent_ids": list(t.agent_ids),
        "system_prompts": list(t.system_prompts),
        "rounds": [
            {
                "round": r.round_index,
                "contributions": list(r.contributions),
                "total": r.total,
                "gains": list(r.gains),
                "cumulative": list(r.cumulative),
            }
            for r in t.rounds
        ],
        "reasoning": [list(x) for x in t.reasoning],
        "exchanges": [[{"prompt": p, "response": a} for p, a in ex] for ex in t.raw_exchanges],
    }


def dumps_record(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, default=_json_default)


def record_to_transcript(rec: dict[str, Any], cell: ConditionCell) -> GameTranscript:
    return GameTranscript(
        config=cell.config(int(rec["master_seed"])),
        agent_ids=tuple(rec["agent_ids"]),
        rounds=tuple(
            RoundRecord(
                round_index=int(r["round"]),
                contributions=tuple(int(c) for c in r["contributions"]),
                total=int(r["total"]),
                gains=tuple(Decimal(g) for g in r["gains"]),
                cumulative=tuple(Decimal(c) for c in r["cumulative"]),
            )
            for r in rec["rounds"]
        ),
        raw_exchanges=tuple(
            tuple((e["prompt"], e["response"]) for e in ex) for ex in rec["exchanges"]
        ),
        game_seed=int(rec["game_seed"]),
        system_prompts=tuple(rec["system_prompts"]),
        reasoning=tuple(tuple(x) for x in rec["reasoning"]),
        valid=bool(rec["valid"]),
        error=rec["error"],
        game_index=int(rec["game_index"]),
    )


def persist_transcripts(batch: BatchResult, path: str | Path) -> Path:
    """Write one JSON line per game, in game-index order."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for t in sorted(batch.transcripts, key=lambda t: t.game_index):
                fh.write(dumps_record(transcript_to_record(t, batch.cell)) + "\n")
    except OSError as exc:
        raise TranscriptIOError(f"cannot write {path}: {exc}") from exc
    return path


def iter_records(path: str | Path):
    """Yield ``(line_number, record)`` for every game line in a transcript file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TranscriptIOError(f"cannot read {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise CorruptLine(n, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise CorruptLine(n, "record is not an object")
        version = rec.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"{path}:{n}: schema_version {version!r}, expected {SCHEMA_VERSION}"
            )
        yield n, rec


def load_transcripts(path: str | Path) -> BatchResult:
    cell = None
    transcripts = []
    for n, rec in iter_records(path):
        try:
            this_cell = ConditionCell.from_descriptor(rec["cell"])
            if cell is None:
                cell = this_cell
            elif this_cell != cell:
                raise CorruptLine(n, "cell descriptor differs from the first line")
            transcripts.append(record_to_transcript(rec, cell))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise CorruptLine(n, f"malformed record ({type(exc).__name__}: {exc})") from None
    if cell is None:
        raise TranscriptIOError(f"{path} holds no games")
    return BatchResult(cell, transcripts, sum(not t.valid for t in transcripts))
