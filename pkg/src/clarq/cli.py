from __future__ import annotations

import json
import logging
import sys

import click

from clarq.errors import ClarqError, ConfigError, ConfigMismatch, MissingArtifact
from clarq.pipeline import STAGES, load_config, run_all, run_stage

EXIT_CODES = {MissingArtifact: 2, ConfigError: 2, ConfigMismatch: 3}


def _fail(exc: ClarqError) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, MissingArtifact):
        payload["artifact"] = exc.artifact
    click.echo(json.dumps(payload), err=True)
    code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    sys.exit(code)


def _stage_command(stage: str):
    @click.command(name=stage, help=f"Run the {stage} stage.")
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
    @click.option("--seed", type=int, default=None, help="Override the master seed.")
    @click.option("--domains", default=None, help="Comma-separated domain allowlist.")
    @click.option("--allow-mixed", is_flag=True, help="Accept artifacts made under another config hash.")
    def command(config_path, seed, domains, allow_mixed):
        try:
            cfg = load_config(config_path, seed, domains.split(",") if domains else None)
            manifest = run_stage(cfg, stage, allow_mixed)
        except ClarqError as exc:
            _fail(exc)
        click.echo(json.dumps({"stage": stage, "counts": manifest["counts"]}, sort_keys=True))

    return command


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Build a clarification-question dataset from stackexchange dumps."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


for _stage in STAGES:
    main.add_command(_stage_command(_stage))


@main.command(name="run", help="Run every stage in order.")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--domains", default=None)
@click.option("--allow-mixed", is_flag=True)
def run(config_path, seed, domains, allow_mixed):
    try:
        cfg = load_config(config_path, seed, domains.split(",") if domains else None)
        manifests = run_all(cfg, allow_mixed)
    except ClarqError as exc:
        _fail(exc)
    for m in manifests:
        click.echo(json.dumps({"stage": m["stage"], "wall_time": m["wall_time"]}))


if __name__ == "__main__":
    main()
