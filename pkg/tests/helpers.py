"""Builders for synthetic batches with chosen contributions."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from pgg_harness.agents import AgentSpec
from pgg_harness.game import GameState, GameTranscript, advance_round
from pgg_harness.runner import BatchResult, ConditionCell, enumerate_conditions


def bot(name: str = "Bot", k: int = 10) -> AgentSpec:
    return replace(AgentSpec.scripted("AlwaysContribute", k=k), display_name=name)


def cell(condition: str = "NoName", pairing: str = "NN", names=("Alpha", "Beta"), study="Study1",
         num_rounds: int = 20) -> ConditionCell:
    specs = [bot(n) for n in names]
    return enumerate_conditions(study, specs, pairings=[pairing], conditions=[condition],
                                games=1, num_rounds=num_rounds)[0]


def batch_from(c: ConditionCell, games: Sequence[Sequence[Sequence[int]]],
               reasoning: Sequence[Sequence[Sequence[str | None]]] | None = None) -> BatchResult:
    """``games[g][r]`` is the contribution vector of round ``r`` in game ``g``."""
    config = c.config()
    out = []
    for g, rounds in enumerate(games):
        state = GameState.new(config.with_(num_rounds=len(rounds)))
        for contribs in rounds:
            state, _ = advance_round(state, list(contribs))
        out.append(GameTranscript(
            config=config.with_(num_rounds=len(rounds)),
            agent_ids=tuple(f"p{i}" for i in range(config.num_players)),
            rounds=state.records,
            raw_exchanges=((),) * config.num_players,
            game_seed=g,
            reasoning=tuple(tuple(r) for r in reasoning[g]) if reasoning else (),
            game_index=g,
        ))
    return BatchResult(replace(c, games=len(games)), out, 0)


def constant_batch(c: ConditionCell, value: int, games: int = 50, rounds: int = 20) -> BatchResult:
    n = len(c.personas)
    return batch_from(c, [[[value] * n] * rounds] * games)
