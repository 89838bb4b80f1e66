"""Players: scripted strategies and LLM-backed agents behind one interface."""

from __future__ import annotations

import ast
import json
import random
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import floor
from typing import TYPE_CHECKING, Any, Callable, Sequence

from .errors import (
    AgentFailure,
    ConfigError,
    DecisionParseError,
    MissingKey,
    NotAnInteger,
    OutOfRange,
    Unparseable,
)
from .game import (
    Agent,
    Condition,
    ContributionDecision,
    GameConfig,
    Observation,
    Persona,
    RoundRecord,
)
from .prompts import (
    build_system_prompt,
    opponent_label,
    render_retry,
    render_round_request,
    render_round_summary,
    rules_reminder,
)
from .seeding import derive_seed

if TYPE_CHECKING:
    from .gateway import Gateway

GAMEPLAY_TEMPERATURE = 1.0
MAX_REPROMPTS = 3


@dataclass(frozen=True)
class AgentSpec:
    """Who plays a seat: a scripted strategy or an LLM."""

    kind: str  # "scripted" | "llm"
    persona: Persona = Persona.NEUTRAL
    strategy: str | None = None
    params: dict[str, Any] = field(default_factory=dict, hash=False)
    provider: str | None = None
    model: str | None = None
    display_name: str | None = None
    temperature: float = GAMEPLAY_TEMPERATURE

    def __post_init__(self) -> None:
        object.__setattr__(self, "persona", Persona(self.persona))
        if self.kind == "scripted":
            if self.strategy not in STRATEGIES:
                raise ConfigError(f"unknown strategy {self.strategy!r}")
        elif self.kind == "llm":
            if not (self.provider and self.model):
                raise ConfigError("LLM agents need a provider and a model id")
            if not 0 <= self.temperature <= 2:
                raise ConfigError(f"temperature {self.temperature} outside [0, 2]")
        else:
            raise ConfigError(f"unknown agent kind {self.kind!r}")

    @classmethod
    def scripted(cls, strategy: str, persona: Persona | str = Persona.NEUTRAL, **params) -> AgentSpec:
        return cls(kind="scripted", persona=persona, strategy=strategy, params=params)

    @classmethod
    def llm(
        cls,
        provider: str,
        model: str,
        display_name: str | None = None,
        temperature: float = GAMEPLAY_TEMPERATURE,
        persona: Persona | str = Persona.NEUTRAL,
    ) -> AgentSpec:
        return cls(
            kind="llm",
            persona=persona,
            provider=provider,
            model=model,
            display_name=display_name or model,
            temperature=temperature,
        )

    @property
    def label(self) -> str:
        """Human-facing name; injected into prompts under the Name condition."""
        if self.display_name:
            return self.display_name
        if self.kind == "scripted":
            if self.params:
                args = ",".join(str(v) for _, v in sorted(self.params.items()))
                return f"{self.strategy}({args})"
            return str(self.strategy)
        return str(self.model)

    def with_persona(self, persona: Persona | str) -> AgentSpec:
        return replace(self, persona=Persona(persona))

    def same_player(self, other: AgentSpec) -> bool:
        return self.with_persona(Persona.NEUTRAL) == other.with_persona(Persona.NEUTRAL)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "scripted":
            d: dict[str, Any] = {"kind": "scripted", "strategy": self.strategy, "params": dict(sorted(self.params.items()))}
            if self.display_name:
                d["display_name"] = self.display_name
        else:
            d = {
                "kind": "llm",
                "provider": self.provider,
                "model": self.model,
                "display_name": self.display_name,
                "temperature": self.temperature,
            }
        d["persona"] = self.persona.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AgentSpec:
        d = dict(d)
        kind = d.pop("kind")
        if kind == "scripted":
            return cls(
                kind="scripted",
                persona=d.get("persona", Persona.NEUTRAL),
                strategy=d["strategy"],
                params={k: int(v) for k, v in (d.get("params") or {}).items()},
                display_name=d.get("display_name"),
            )
        return cls(
            kind="llm",
            persona=d.get("persona", Persona.NEUTRAL),
            provider=d["provider"],
            model=d["model"],
            display_name=d.get("display_name"),
            temperature=float(d.get("temperature", GAMEPLAY_TEMPERATURE)),
        )


_SPEC_RE = re.compile(r"^(?P<name>\w+)(?:\((?P<arg>-?\d+)\))?$")


def parse_agent_spec(text: str) -> AgentSpec:
    """Parse the CLI shorthand for an agent.

    ``scripted:Defector``, ``scripted:AlwaysContribute(10)``,
    ``openai:gpt-4o=GPT-4o`` (provider:model=display name).
    """
    head, sep, rest = text.partition(":")
    if not sep or not rest:
        raise ConfigError(f"cannot parse agent spec {text!r}")
    if head == "scripted":
        m = _SPEC_RE.match(rest.strip())
        if not m:
            raise ConfigError(f"cannot parse scripted strategy {rest!r}")
        name, arg = m.group("name"), m.group("arg")
        params = {}
        if arg is not None:
            params[STRATEGY_ARG.get(name, "k")] = int(arg)
        return AgentSpec.scripted(name, **params)
    model, _, display = rest.partition("=")
    return AgentSpec.llm(head, model.strip(), display.strip() or None)


# --- parsing ----------------------------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```$", re.DOTALL)


def render_decision(decision: ContributionDecision) -> str:
    if decision.reasoning is not None:
        return json.dumps(
            {"reasoning": decision.reasoning, "contribution": decision.contribution},
            ensure_ascii=False,
        )
    return json.dumps({"contribution": decision.contribution})


def parse_decision(
    raw: str,
    expects_reasoning: bool,
    endowment: int,
    *,
    strict: bool = False,
) -> ContributionDecision:
    """Turn an agent reply into a decision.

    Lenient mode (default) strips a surrounding markdown fence and accepts a
    Python-style dict with single-quoted keys.
    """
    text = raw.strip()
    obj: Any = None
    if not strict:
        m = _FENCE_RE.match(text)
        if m:
            text = m.group(1).strip()
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        if strict:
            raise Unparseable(f"not valid JSON: {raw[:80]!r}") from None
        try:
            obj = ast.literal_eval(text)
        except (ValueError, SyntaxError, MemoryError, RecursionError, TypeError):
            raise Unparseable(f"not a JSON object: {raw[:80]!r}") from None
    if not isinstance(obj, dict):
        raise Unparseable(f"expected an object, got {type(obj).__name__}")
    if "contribution" not in obj:
        raise MissingKey("missing key 'contribution'")
    reasoning = None
    if expects_reasoning:
        if "reasoning" not in obj:
            raise MissingKey("missing key 'reasoning'")
        reasoning = obj["reasoning"]
        if not isinstance(reasoning, str):
            raise Unparseable("'reasoning' must be a string")
    value = obj["contribution"]
    if isinstance(value, bool) or not isinstance(value, int):
        raise NotAnInteger(f"contribution {value!r} is not an integer")
    if not 0 <= value <= endowment:
        raise OutOfRange(f"contribution {value} outside [0, {endowment}]")
    return ContributionDecision(value, reasoning)


# --- scripted strategies ----------------------------------------------------


def _round_half_up(x: Fraction) -> int:
    return floor(x + Fraction(1, 2))


def _always(params, obs, rng):
    return params.get("k", obs.endowment)


def _defector(params, obs, rng):
    return 0


def _matcher(params, obs, rng):
    if obs.round_index == 1:
        return obs.endowment
    last = obs.history[-1]
    others_mean = Fraction(last.total - last.own_contribution, obs.num_players - 1)
    return _round_half_up(others_mean)


def _endgame(params, obs, rng):
    if obs.round_index == obs.num_rounds:
        return 0
    return params.get("k", obs.endowment)


def _random_uniform(params, obs, rng):
    return rng.randint(0, obs.endowment)


Strategy = Callable[[dict, Observation, random.Random], int]

STRATEGIES: dict[str, Strategy] = {
    "AlwaysContribute": _always,
    "Defector": _defector,
    "Matcher": _matcher,
    "EndgameDefector": _endgame,
    "RandomUniform": _random_uniform,
}
STRATEGY_ARG = {"AlwaysContribute": "k", "EndgameDefector": "k"}


def scripted_decide(
    strategy: str,
    params: dict[str, Any],
    observation: Observation,
    rng: random.Random | None = None,
    *,
    with_reasoning: bool = False,
) -> ContributionDecision:
    try:
        fn = STRATEGIES[strategy]
    except KeyError:
        raise ConfigError(f"unknown strategy {strategy!r}") from None
    c = fn(params, observation, rng or random.Random(0))
    if not 0 <= c <= observation.endowment:
        raise ConfigError(f"{strategy} parameters yield contribution {c} outside [0, {observation.endowment}]")
    reasoning = f"Scripted {strategy} strategy." if with_reasoning else None
    return ContributionDecision(c, reasoning)


# --- agents -----------------------------------------------------------------


class _SeatAgent:
    """Prompt bookkeeping shared by every seat."""

    def __init__(self, agent_id: str, spec: AgentSpec, config: GameConfig, system_prompt: str,
                 opponent: str, seed: int) -> None:
        self.agent_id = agent_id
        self.spec = spec
        self.config = config
        self.system_prompt = system_prompt
        self.opponent_label = opponent
        self.rules_reminder = (
            rules_reminder(opponent, config.num_rounds, config.endowment, config.multiplier)
            if config.study_style.repeats_rules
            else None
        )
        self.seed = seed
        self.exchanges: list[tuple[str, str]] = []
        self._pending: str | None = None

    def _turn_prompt(self, obs: Observation) -> str:
        parts = []
        if self._pending is not None:
            parts.append(self._pending)
        elif obs.rules_reminder:
            parts.append(obs.rules_reminder)
        parts.append(render_round_request(obs.round_index, obs.num_rounds, self.config.study_style))
        self._pending = None
        return "\n".join(parts)

    def observe(self, record: RoundRecord, player_index: int) -> None:
        self._pending = render_round_summary(
            record, player_index, self.config.study_style, self.rules_reminder
        )


class ScriptedAgent(_SeatAgent):
    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.rng = random.Random(self.seed)

    def decide(self, observation: Observation) -> ContributionDecision:
        prompt = self._turn_prompt(observation)
        decision = scripted_decide(
            str(self.spec.strategy),
            self.spec.params,
            observation,
            self.rng,
            with_reasoning=self.config.study_style.wants_reasoning,
        )
        self.exchanges.append((prompt, render_decision(decision)))
        return decision


class LlmAgent(_SeatAgent):
    """Keeps one conversation per game and re-prompts on malformed replies."""

    def __init__(self, *args, gateway: Gateway, max_reprompts: int = MAX_REPROMPTS,
                 strict: bool = False, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.gateway = gateway
        self.max_reprompts = max_reprompts
        self.strict = strict
        self.messages: list[tuple[str, str]] = [("system", self.system_prompt)]

    def decide(self, observation: Observation) -> ContributionDecision:
        from .gateway import ChatRequest

        prompt = self._turn_prompt(observation)
        expects = self.config.study_style.wants_reasoning
        for attempt in range(self.max_reprompts + 1):
            self.messages.append(("user", prompt))
            request = ChatRequest(
                model=str(self.spec.model),
                messages=tuple(self.messages),
                temperature=self.spec.temperature,
                seed=self.seed,
                provider=str(self.spec.provider),
            )
            reply = self.gateway.chat_complete(request)
            self.messages.append(("assistant", reply))
            self.exchanges.append((prompt, reply))
            try:
                return parse_decision(reply, expects, self.config.endowment, strict=self.strict)
            except DecisionParseError as exc:
                last = exc
                prompt = render_retry(exc, expects)
        raise AgentFailure(
            f"{self.agent_id}: no usable reply after {self.max_reprompts} re-prompts ({last})"
        )


def build_agents(
    config: GameConfig,
    specs: Sequence[AgentSpec],
    *,
    gateway: Gateway | None = None,
    game_seed: int = 0,
    prompt_variant: str = "corrected",
    strict_parsing: bool = False,
) -> list[Agent]:
    """Seat one agent per spec, each with its system prompt already built.

    Personas come from ``config.personas``; the specs only say who plays.
    """
    if len(specs) != config.num_players:
        raise ConfigError(f"expected {config.num_players} agent specs, got {len(specs)}")
    agents: list[Agent] = []
    for i, (spec, persona) in enumerate(zip(specs, config.personas)):
        spec = spec.with_persona(persona)
        name = spec.label
        prompt = build_system_prompt(
            config.study_style,
            persona,
            config.condition,
            name,
            num_players=config.num_players,
            num_rounds=config.num_rounds,
            endowment=config.endowment,
            multiplier=config.multiplier,
            variant=prompt_variant,
        )
        opp = opponent_label(config.study_style, config.condition, name)
        args = (f"p{i}:{name}", spec, config, prompt, opp, derive_seed(game_seed, i))
        if spec.kind == "scripted":
            agents.append(ScriptedAgent(*args))
        else:
            if gateway is None:
                raise ConfigError("LLM agents need a gateway")
            agents.append(LlmAgent(*args, gateway=gateway, strict=strict_parsing))
    return agents


def name_condition_ok(prompt: str, condition: Condition, self_name: str, other_names: Sequence[str], study) -> bool:
    """Whether a generated system prompt carries the right opponent framing."""
    from .prompts import NO_NAME_FRAMING

    if Condition(condition) is Condition.NAME:
        return self_name in prompt and not any(
            n in prompt for n in other_names if n and n != self_name
        )
    return NO_NAME_FRAMING[study] in prompt
