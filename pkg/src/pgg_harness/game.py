"""Iterated public goods game: payoffs, state transitions, and full-game execution.

Points are carried as :class:`decimal.Decimal` values computed from exact
rational arithmetic, so 20 rounds of ``1.6 * T / N`` accumulate without any
float drift. Contributions are plain integers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from decimal import Decimal
from fractions import Fraction
from typing import Protocol, Sequence

from .errors import AgentFailure, AuthError, ConfigError, GameStateError, GatewayError, ValidationError

DEFAULT_ROUNDS = 20
DEFAULT_ENDOWMENT = 10
DEFAULT_MULTIPLIER = Decimal("1.6")

TENTH = Decimal("0.1")


class Condition(str, enum.Enum):
    NO_NAME = "NoName"
    NAME = "Name"


class Persona(str, enum.Enum):
    COLLECTIVE = "Collective"
    NEUTRAL = "Neutral"
    SELFISH = "Selfish"

    @property
    def letter(self) -> str:
        return self.value[0]


class StudyStyle(str, enum.Enum):
    STUDY1 = "Study1"
    STUDY2 = "Study2"
    STUDY3 = "Study3"

    @property
    def number(self) -> int:
        return int(self.value[-1])

    @property
    def wants_reasoning(self) -> bool:
        return self is StudyStyle.STUDY1

    @property
    def repeats_rules(self) -> bool:
        return self is StudyStyle.STUDY1


def _terminating(frac: Fraction) -> bool:
    den = frac.denominator
    for p in (2, 5):
        while den % p == 0:
            den //= p
    return den == 1


def to_points(value: Fraction | int) -> Decimal:
    """Exact decimal for a terminating rational, with at least tenths shown."""
    frac = Fraction(value)
    if not _terminating(frac):
        raise ValueError(f"{frac} has no finite decimal expansion")
    out = Decimal(frac.numerator) / Decimal(frac.denominator)
    if out.as_tuple().exponent > -1:  # type: ignore[operator]
        out = out.quantize(TENTH)
    return out


@dataclass(frozen=True)
class GameConfig:
    num_players: int = 2
    num_rounds: int = DEFAULT_ROUNDS
    endowment: int = DEFAULT_ENDOWMENT
    multiplier: Decimal = DEFAULT_MULTIPLIER
    condition: Condition = Condition.NO_NAME
    personas: tuple[Persona, ...] = (Persona.NEUTRAL, Persona.NEUTRAL)
    study_style: StudyStyle = StudyStyle.STUDY1
    games: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "multiplier", Decimal(str(self.multiplier)))
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "study_style", StudyStyle(self.study_style))
        object.__setattr__(self, "personas", tuple(Persona(p) for p in self.personas))
        if self.num_players < 2:
            raise ConfigError(f"num_players must be >= 2, got {self.num_players}")
        if self.num_rounds < 1:
            raise ConfigError(f"num_rounds must be >= 1, got {self.num_rounds}")
        if self.endowment < 0:
            raise ConfigError(f"endowment must be >= 0, got {self.endowment}")
        if not (1 < self.multiplier < self.num_players):
            raise ConfigError(
                f"multiplier must satisfy 1 < m < {self.num_players}, got {self.multiplier}"
            )
        if not _terminating(Fraction(self.multiplier) / self.num_players):
            raise ConfigError("multiplier / num_players must have a finite decimal expansion")
        if len(self.personas) != self.num_players:
            raise ConfigError(
                f"expected {self.num_players} personas, got {len(self.personas)}"
            )
        if self.study_style is StudyStyle.STUDY3 and len(set(self.personas)) != 1:
            raise ConfigError("Study3 requires every player to share one persona")
        if self.games < 1:
            raise ConfigError(f"games must be >= 1, got {self.games}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def with_(self, **changes) -> GameConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    contributions: tuple[int, ...]
    total: int
    gains: tuple[Decimal, ...]
    cumulative: tuple[Decimal, ...]


@dataclass(frozen=True)
class ContributionDecision:
    contribution: int
    reasoning: str | None = None


@dataclass(frozen=True)
class RoundView:
    """What one player learns after a round."""

    round_index: int
    total: int
    own_contribution: int
    gain: Decimal
    cumulative: Decimal


@dataclass(frozen=True)
class Observation:
    round_index: int
    num_rounds: int
    endowment: int
    num_players: int
    history: tuple[RoundView, ...] = ()
    opponent_label: str = ""
    rules_reminder: str | None = None

    def __post_init__(self) -> None:
        if len(self.history) != self.round_index - 1:
            raise ValueError("history length must equal round_index - 1")


def round_payoff(
    contributions: Sequence[int],
    endowment: int,
    multiplier: Decimal | str | Fraction,
    num_players: int,
) -> list[Decimal]:
    """Per-player gains: kept points plus an equal share of the multiplied pool."""
    if len(contributions) != num_players:
        raise ValidationError(
            f"expected {num_players} contributions, got {len(contributions)}"
        )
    for i, c in enumerate(contributions):
        if isinstance(c, bool) or not isinstance(c, int):
            raise ValidationError(f"player {i}: contribution {c!r} is not an integer", i)
        if not 0 <= c <= endowment:
            raise ValidationError(
                f"player {i}: contribution {c} outside [0, {endowment}]", i
            )
    total = sum(contributions)
    share = Fraction(str(multiplier)) * total / num_players
    return [to_points(endowment - c + share) for c in contributions]


def best_response_oracle(others_total: int, config: GameConfig) -> int:
    """Contribution maximising one's own single-round gain, found by enumeration.

    Ties resolve to the smallest contribution.
    """
    n, e = config.num_players, config.endowment
    if not 0 <= others_total <= (n - 1) * e:
        raise ValidationError(f"others_total {others_total} outside [0, {(n - 1) * e}]")
    m = Fraction(config.multiplier)
    best, best_gain = 0, None
    for c in range(e + 1):
        gain = (e - c) + m * (others_total + c) / n
        if best_gain is None or gain > best_gain:
            best, best_gain = c, gain
    return best


@dataclass(frozen=True)
class GameState:
    config: GameConfig
    round_index: int = 0
    cumulative: tuple[Decimal, ...] = ()
    records: tuple[RoundRecord, ...] = ()

    @classmethod
    def new(cls, config: GameConfig) -> GameState:
        zero = to_points(0)
        return cls(config=config, cumulative=(zero,) * config.num_players)

    @property
    def finished(self) -> bool:
        return self.round_index >= self.config.num_rounds


def advance_round(state: GameState, contributions: Sequence[int]) -> tuple[GameState, RoundRecord]:
    if state.finished:
        raise GameStateError(
            f"game already played all {state.config.num_rounds} rounds"
        )
    cfg = state.config
    gains = round_payoff(contributions, cfg.endowment, cfg.multiplier, cfg.num_players)
    cumulative = tuple(a + g for a, g in zip(state.cumulative, gains))
    record = RoundRecord(
        round_index=state.round_index + 1,
        contributions=tuple(contributions),
        total=sum(contributions),
        gains=tuple(gains),
        cumulative=cumulative,
    )
    new_state = GameState(
        config=cfg,
        round_index=record.round_index,
        cumulative=cumulative,
        records=state.records + (record,),
    )
    return new_state, record


class Agent(Protocol):
    agent_id: str
    system_prompt: str
    opponent_label: str
    rules_reminder: str | None
    exchanges: list[tuple[str, str]]

    def decide(self, observation: Observation) -> ContributionDecision: ...

    def observe(self, record: RoundRecord, player_index: int) -> None: ...


@dataclass(frozen=True)
class GameTranscript:
    config: GameConfig
    agent_ids: tuple[str, ...]
    rounds: tuple[RoundRecord, ...]
    raw_exchanges: tuple[tuple[tuple[str, str], ...], ...]
    game_seed: int
    system_prompts: tuple[str, ...] = ()
    reasoning: tuple[tuple[str | None, ...], ...] = ()
    valid: bool = True
    error: str | None = None
    game_index: int = 0

    @property
    def final_scores(self) -> tuple[Decimal, ...]:
        if not self.rounds:
            return (to_points(0),) * self.config.num_players
        return self.rounds[-1].cumulative


def view_for(record: RoundRecord, player_index: int) -> RoundView:
    return RoundView(
        round_index=record.round_index,
        total=record.total,
        own_contribution=record.contributions[player_index],
        gain=record.gains[player_index],
        cumulative=record.cumulative[player_index],
    )


def play_game(
    config: GameConfig,
    agents: Sequence[Agent],
    game_seed: int | None = None,
    game_index: int = 0,
) -> GameTranscript:
    """Run one game to completion.

    Every agent decides before any decision is revealed. An agent that fails
    past its retry budget aborts the game; the partial transcript comes back
    with ``valid=False``.
    """
    if len(agents) != config.num_players:
        raise ConfigError(f"expected {config.num_players} agents, got {len(agents)}")
    seed = config.seed if game_seed is None else game_seed
    state = GameState.new(config)
    histories: list[list[RoundView]] = [[] for _ in agents]
    reasoning: list[tuple[str | None, ...]] = []
    error = None
    while not state.finished:
        r = state.round_index + 1
        decisions = []
        try:
            for i, agent in enumerate(agents):
                obs = Observation(
                    round_index=r,
                    num_rounds=config.num_rounds,
                    endowment=config.endowment,
                    num_players=config.num_players,
                    history=tuple(histories[i]),
                    opponent_label=agent.opponent_label,
                    rules_reminder=agent.rules_reminder,
                )
                decisions.append(agent.decide(obs))
            state, record = advance_round(state, [d.contribution for d in decisions])
        except AuthError:
            raise
        except (AgentFailure, GatewayError, ValidationError) as exc:
            error = f"round {r}: {type(exc).__name__}: {exc}"
            break
        reasoning.append(tuple(d.reasoning for d in decisions))
        for i, agent in enumerate(agents):
            histories[i].append(view_for(record, i))
            agent.observe(record, i)
    return GameTranscript(
        config=config,
        agent_ids=tuple(a.agent_id for a in agents),
        rounds=state.records,
        raw_exchanges=tuple(tuple(a.exchanges) for a in agents),
        game_seed=seed,
        system_prompts=tuple(a.system_prompt for a in agents),
        reasoning=tuple(reasoning),
        valid=error is None,
        error=error,
        game_index=game_index,
    )
