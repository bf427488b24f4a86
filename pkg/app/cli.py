import json
from pathlib import Path
from typing import Annotated, Optional

import typer
from loguru import logger

from .dependencies import configure_logging, get_settings
from .utils.bench import Suite, bench_csv, bench as run_bench
from .utils.privacy_audit import render_reports
from .utils.runner import (
    RunResult,
    bound_violations,
    render_bounds,
    run_scenario,
    transactions_from_trace,
    write_artifacts,
)
from .utils.scenario import FIGURES, Scenario, ScenarioError, load_figure, load_scenario
from .utils.shard import Protocol
from .utils.simnet import Trace

app = typer.Typer(help="Simulate private multi-shard transactions and their atomic commit.")

ScenarioPath = Annotated[Path, typer.Argument(help="Scenario YAML file")]
Seed = Annotated[Optional[int], typer.Option(help="Override the network seed")]
ProtocolOption = Annotated[Optional[Protocol], typer.Option("--protocol", help="Commit protocol")]
Optimize = Annotated[Optional[bool], typer.Option("--optimize/--no-optimize", help="Early-finalization cascade")]
Replication = Annotated[Optional[int], typer.Option(min=1, help="Nodes per shard")]
Scheme = Annotated[Optional[str], typer.Option(help="Signature scheme: keyed-hash or ecdsa")]
OutDir = Annotated[Optional[Path], typer.Option(help="Artifact directory (default MSPT_OUT_DIR)")]
LogLevel = Annotated[Optional[str], typer.Option(help="Log level (default MSPT_LOG_LEVEL)")]


@app.callback()
def main(log_level: LogLevel = None) -> None:
    configure_logging(log_level)


def _load(path: Path) -> Scenario:
    try:
        return load_scenario(path)
    except ScenarioError as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=2)


def _run(scenario: Scenario, **overrides) -> RunResult:
    try:
        return run_scenario(scenario, **overrides)
    except ScenarioError as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=2)


def _finish(result: RunResult, out_dir: Path | None) -> None:
    paths = write_artifacts(result, out_dir or Path(get_settings().out_dir) / result.scenario.name)
    typer.echo(json.dumps(result.summary(), indent=2, sort_keys=True))
    typer.echo(f"artifacts: {paths['trace.jsonl'].parent}")
    if result.failed:
        raise typer.Exit(code=1)


@app.command()
def run(
    scenario: ScenarioPath,
    seed: Seed = None,
    protocol: ProtocolOption = None,
    optimize: Optimize = None,
    replication: Replication = None,
    scheme: Scheme = None,
    out_dir: OutDir = None,
) -> None:
    """Run a scenario, write its artifacts and fail on any violated invariant."""
    result = _run(
        _load(scenario), seed=seed, protocol=protocol, optimize=optimize, replication=replication, scheme=scheme
    )
    _finish(result, out_dir)


@app.command("replay-figure")
def replay_figure(
    figure: Annotated[str, typer.Argument(help=f"One of {', '.join(sorted(FIGURES))}")],
    seed: Seed = None,
    protocol: ProtocolOption = None,
    optimize: Optimize = None,
    replication: Replication = None,
    scheme: Scheme = None,
    out_dir: OutDir = None,
) -> None:
    """Replay one of the bundled figure scenarios."""
    try:
        scenario = load_figure(figure)
    except ScenarioError as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=2)
    result = _run(scenario, seed=seed, protocol=protocol, optimize=optimize, replication=replication, scheme=scheme)
    _finish(result, out_dir)


@app.command("check-bounds")
def check_bounds(
    scenario: ScenarioPath,
    trace: Annotated[
        Optional[Path], typer.Option(help="Recorded trace.jsonl to check instead of running the scenario")
    ] = None,
    seed: Seed = None,
    protocol: ProtocolOption = None,
    optimize: Optimize = None,
    replication: Replication = None,
) -> None:
    """Print observed finalization rounds against the bounds of each dependency graph."""
    loaded = _load(scenario)
    if trace is None:
        result = _run(loaded, seed=seed, protocol=protocol, optimize=optimize, replication=replication)
        recorded, checked = result.trace, result.scenario
    else:
        try:
            checked = loaded.with_overrides(seed=seed, protocol=protocol, optimize=optimize, replication=replication)
            recorded = Trace.from_jsonl(trace.read_text())
        except (OSError, ValueError) as e:
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=2)
    transactions = transactions_from_trace(recorded, checked)
    violations = bound_violations(transactions, checked.protocol.optimize)
    typer.echo(render_bounds(transactions, violations), nl=False)
    if violations:
        raise typer.Exit(code=1)


@app.command()
def audit(
    scenario: ScenarioPath,
    seed: Seed = None,
    protocol: ProtocolOption = None,
    replication: Replication = None,
) -> None:
    """Print what the ledger and each shard observed that they should not have."""
    result = _run(_load(scenario), seed=seed, protocol=protocol, replication=replication)
    typer.echo(render_reports(result.audits), nl=False)
    if any(report.findings for report in result.audits):
        raise typer.Exit(code=1)


@app.command()
def bench(
    suite: Annotated[Suite, typer.Argument(help="Scenario family")] = Suite.CHAIN,
    repetitions: Annotated[int, typer.Option(min=1)] = 1,
    max_shards: Annotated[int, typer.Option(min=1, max=8)] = 5,
    seed: Seed = None,
    protocol: ProtocolOption = None,
    out_dir: OutDir = None,
) -> None:
    """Compare PPAC and 2PC rounds, virtual latency and message counts."""
    protocols = [protocol] if protocol else [Protocol.PPAC, Protocol.TWO_PC]
    rows = run_bench(
        suite,
        repetitions=repetitions,
        max_shards=max_shards,
        protocols=protocols,
        seed=get_settings().default_seed if seed is None else seed,
    )
    text = bench_csv(rows)
    out = out_dir or Path(get_settings().out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"bench-{suite.value}.csv"
    path.write_text(text)
    logger.info(f"Wrote {len(rows)} benchmark rows to {path}")
    typer.echo(text, nl=False)


if __name__ == "__main__":
    app()
