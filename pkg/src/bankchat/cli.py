"""Command line entry points: suite evaluation and the HTTP server."""

from __future__ import annotations

import sys

import click

from .bootstrap import build_registry
from .config import AppConfig, data_path
from .evalharness import emit_report, load_rubric, load_suite, run_suite
from .gateway import SessionGateway, create_app


def _load_config(config_path: str | None) -> AppConfig:
    return AppConfig.from_json(config_path) if config_path else AppConfig()


@click.group()
def main() -> None:
    """Conversational banking assistant tools."""


@main.group("eval")
def eval_group() -> None:
    """Run evaluation suites."""


@eval_group.command("run")
@click.option("--suite", "suite_path", default=data_path("desk_suite.jsonl"),
              show_default=True, help="JSONL test suite to replay.")
@click.option("--config", "config_path", default=None,
              help="JSON config overlay; defaults apply when omitted.")
@click.option("--format", "fmt",
              type=click.Choice(["json", "table", "radarData"]), default="table",
              show_default=True)
@click.option("--rubric", "rubric_path", default=None,
              help="JSON file with human-rated riskTolerance and "
                   "languageProficiency scores.")
@click.option("--workers", default=1, show_default=True)
def eval_run(
    suite_path: str,
    config_path: str | None,
    fmt: str,
    rubric_path: str | None,
    workers: int,
) -> None:
    """Replay a suite through the pipeline and print the scored report.

    Exits nonzero when a hallucination gate trips: transactional error
    rate above 0.5% or FAQ error rate above 2%.
    """
    config = _load_config(config_path)
    registry = build_registry(config)
    cases, rejects = load_suite(suite_path)
    for reject in rejects:
        click.echo(f"skipped line {reject.lineno}: {reject.reason}", err=True)
    rubric = load_rubric(rubric_path) if rubric_path else None
    report = run_suite(cases, registry, config.eval, rubric=rubric, workers=workers)
    click.echo(emit_report(report, fmt))
    if not report.gates_passed:
        sys.exit(2)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--config", "config_path", default=None)
def serve(host: str, port: int, config_path: str | None) -> None:
    """Start the session gateway."""
    import uvicorn

    config = _load_config(config_path)
    registry = build_registry(config)
    gateway = SessionGateway(
        registry, config.gateway, history_cap=config.history_cap
    )
    uvicorn.run(create_app(gateway), host=host, port=port)


if __name__ == "__main__":
    main()
