"""Command-line entry point: ``pgg run | report | validate | fixtures``."""

from __future__ import annotations

import json
import logging
import sys
import time
import zlib
from dataclasses import replace
from pathlib import Path

import click

from .agents import parse_agent_spec
from .errors import ConfigError, GatewayError, HarnessError, InsufficientData, TranscriptIOError
from .game import Condition, StudyStyle
from .gateway import MockTransport, Gateway, ReplayTransport, live_transports, read_fixture
from .manifest import GATEWAY_MODES, RunManifest, build_gateway, load_manifest
from .report import MODES, cmd_report
from .runner import enumerate_conditions, persist_transcripts, run_batch
from .seeding import derive_seed
from .validate import validate_paths

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG, EXIT_GATEWAY, EXIT_IO = 0, 1, 2, 3, 4


def _fail(category: str, exc: Exception, code: int):
    click.echo(f"{category} error: {exc}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map harness exceptions to categorized messages and exit codes."""
    try:
        return fn()
    except ConfigError as exc:
        _fail("config", exc, EXIT_CONFIG)
    except GatewayError as exc:
        _fail("gateway", exc, EXIT_GATEWAY)
    except (TranscriptIOError, OSError) as exc:
        _fail("io", exc, EXIT_IO)
    except (InsufficientData, HarnessError) as exc:
        _fail("data", exc, EXIT_CONFIG)


def cell_seed(master_seed: int, slug: str) -> int:
    """Per-cell master seed; depends only on the run seed and the cell's name."""
    return derive_seed(master_seed, zlib.crc32(slug.encode("utf-8")))


def cmd_run(manifest: RunManifest) -> dict:
    """Run every cell of the manifest and write transcripts plus ``run_summary.json``."""
    manifest.validate()
    cells = enumerate_conditions(
        manifest.study,
        manifest.agents,
        games=manifest.games,
        pairings=manifest.pairings,
        conditions=manifest.conditions,
        num_rounds=manifest.num_rounds,
        endowment=manifest.endowment,
        multiplier=manifest.multiplier,
    )
    out = Path(manifest.out)
    tdir = out / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    gateway, recorder = build_gateway(manifest)
    started = time.perf_counter()
    summary_cells = []
    for cell in cells:
        batch = run_batch(cell, cell_seed(manifest.seed, cell.slug), manifest.parallelism, gateway,
                          prompt_variant=manifest.prompt_variant)
        path = persist_transcripts(batch, tdir / f"{cell.slug}.jsonl")
        summary_cells.append({
            "file": str(path.relative_to(out)),
            "study": cell.study.value,
            "pairing": cell.label,
            "condition": cell.condition.value,
            "games": cell.games,
            "valid": len(batch.valid_transcripts),
            "invalid": batch.invalid_count,
        })
        logging.getLogger(__name__).info("%s: %d valid, %d invalid", cell.slug,
                                         len(batch.valid_transcripts), batch.invalid_count)
    if recorder is not None:
        recorder.save()
    summary = {
        "study": manifest.study.value,
        "seed": manifest.seed,
        "gateway": manifest.gateway,
        "cells": summary_cells,
        "games": sum(c["games"] for c in summary_cells),
        "invalid_games": sum(c["invalid"] for c in summary_cells),
        "llm_calls": gateway.stats.calls,
        "llm_retries": gateway.stats.retries,
        "elapsed_seconds": round(time.perf_counter() - started, 3),
    }
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def _run_options(f):
    opts = [
        click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), help="YAML run manifest."),
        click.option("--study", type=click.Choice([s.value for s in StudyStyle])),
        click.option("--agent", "agents", multiple=True,
                     help="Agent spec, e.g. scripted:Defector or openai:gpt-4o=GPT-4o. Repeatable."),
        click.option("--condition", "conditions", multiple=True, type=click.Choice([c.value for c in Condition])),
        click.option("--pairing", "pairings", multiple=True, help="Persona ordering such as CS. Repeatable."),
        click.option("--games", type=int),
        click.option("--rounds", "num_rounds", type=int),
        click.option("--seed", type=int),
        click.option("--parallelism", type=int),
        click.option("--gateway", type=click.Choice(GATEWAY_MODES)),
        click.option("--fixture", type=click.Path(dir_okay=False)),
        click.option("--prompt-variant", type=click.Choice(["corrected", "printed"])),
        click.option("--out", type=click.Path(file_okay=False)),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _manifest_from_options(manifest_path, study, agents, conditions, pairings, games, num_rounds, seed,
                           parallelism, gateway, fixture, prompt_variant, out) -> RunManifest:
    m = load_manifest(manifest_path) if manifest_path else RunManifest()
    return m.with_overrides(
        study=StudyStyle(study) if study else None,
        agents=tuple(parse_agent_spec(a) for a in agents) or None,
        conditions=tuple(Condition(c) for c in conditions) or None,
        pairings=tuple(pairings) or None,
        games=games,
        num_rounds=num_rounds,
        seed=seed,
        parallelism=parallelism,
        gateway=gateway,
        fixture=Path(fixture) if fixture else None,
        prompt_variant=prompt_variant,
        out=Path(out) if out else None,
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Iterated public goods game harness for LLM agents."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@_run_options
def run(**kw) -> None:
    """Play every condition cell of a study and write transcripts."""
    summary = _guard(lambda: cmd_run(_manifest_from_options(**kw)))
    click.echo(f"{len(summary['cells'])} cells, {summary['games']} games, "
               f"{summary['invalid_games']} invalid, {summary['elapsed_seconds']}s")


@main.command()
@click.argument("paths", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(MODES), required=True)
@click.option("--out", type=click.Path(file_okay=False), default="report", show_default=True)
@click.option("--gateway", type=click.Choice(("live", "mock", "replay")), default="mock", show_default=True,
              help="Judge transport for sentiment mode.")
@click.option("--fixture", type=click.Path(dir_okay=False))
@click.option("--judge-model", default="gemini-2.5-flash", show_default=True)
@click.option("--judge-provider", default="gemini", show_default=True)
@click.option("--spearman-mode", type=click.Choice(("raw", "averaged")), default="raw", show_default=True)
def report(paths, mode, out, gateway, fixture, judge_model, judge_provider, spearman_mode) -> None:
    """Write CSV tables and SVG figures from transcript files."""
    if not paths:
        raise click.UsageError("give at least one transcript file")

    def go():
        judge = None
        if mode == "sentiment":
            if gateway == "replay":
                if not fixture:
                    raise ConfigError("replay mode requires --fixture")
                judge = Gateway(ReplayTransport(fixture))
            elif gateway == "live":
                judge = Gateway(live_transports())
            else:
                judge = Gateway(MockTransport())
        return cmd_report(paths, mode, out, judge=judge, judge_model=judge_model,
                          judge_provider=judge_provider, spearman_mode=spearman_mode)

    written = _guard(go)
    for kind, path in written.items():
        click.echo(f"{kind}: {path}")


@main.command()
@click.argument("paths", nargs=-1, type=click.Path(dir_okay=False))
def validate(paths) -> None:
    """Re-check payoff conservation, ranges and cumulative sums."""
    if not paths:
        raise click.UsageError("give at least one transcript file")
    rep = validate_paths(paths)
    for err in rep.file_errors:
        click.echo(err, err=True)
    for v in rep.violations:
        click.echo(str(v))
    click.echo(f"{rep.games_checked} games checked, {len(rep.violations)} violations, "
               f"{len(rep.file_errors)} unreadable files")
    if not rep.ok:
        sys.exit(EXIT_VIOLATIONS if not rep.file_errors else EXIT_IO)


@main.group()
def fixtures() -> None:
    """Record and inspect gateway fixture sessions."""


@fixtures.command("record")
@_run_options
@click.option("--source", type=click.Choice(("mock", "live")), default="mock", show_default=True)
def fixtures_record(source, **kw) -> None:
    """Run a manifest through a recording gateway and save the fixture."""
    if not kw.get("fixture"):
        raise click.UsageError("--fixture is required")

    def go():
        m = _manifest_from_options(**kw)
        return cmd_run(replace(m, gateway="record", record_source=source))

    summary = _guard(go)
    click.echo(f"recorded {summary['llm_calls']} calls to {kw['fixture']}")


@fixtures.command("inspect")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def fixtures_inspect(path) -> None:
    """Summarise a fixture file."""
    header, entries = _guard(lambda: read_fixture(path))
    models: dict[str, int] = {}
    for e in entries:
        models[e["request"]["model"]] = models.get(e["request"]["model"], 0) + 1
    click.echo(f"session: {header.get('session')}")
    click.echo(f"entries: {len(entries)} ({len({e['hash'] for e in entries})} distinct requests)")
    for model, count in sorted(models.items()):
        click.echo(f"  {model}: {count}")


if __name__ == "__main__":
    main()
