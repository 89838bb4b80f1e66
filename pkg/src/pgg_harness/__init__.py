"""Batch harness for the iterated public goods game with LLM and scripted players."""

from .agents import AgentSpec, build_agents, parse_decision, scripted_decide
from .analysis import delta_table, mask_reasoning, per_round_stats, score_sentiment, spearman
from .game import (
    Condition,
    GameConfig,
    GameState,
    Persona,
    StudyStyle,
    advance_round,
    best_response_oracle,
    play_game,
    round_payoff,
)
from .prompts import build_system_prompt, render_round_summary
from .runner import enumerate_conditions, load_transcripts, persist_transcripts, run_batch

__all__ = [
    "AgentSpec",
    "Condition",
    "GameConfig",
    "GameState",
    "Persona",
    "StudyStyle",
    "advance_round",
    "best_response_oracle",
    "build_agents",
    "build_system_prompt",
    "delta_table",
    "enumerate_conditions",
    "load_transcripts",
    "mask_reasoning",
    "parse_decision",
    "per_round_stats",
    "persist_transcripts",
    "play_game",
    "render_round_summary",
    "round_payoff",
    "run_batch",
    "score_sentiment",
    "scripted_decide",
    "spearman",
]
