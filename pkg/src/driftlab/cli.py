"""Thin command-line client for the experiment service.

Subcommands mirror the service endpoints one-to-one.  By default the request
is dispatched in-process (no server needed, same code path); with --server it
is POSTed to a running instance and the returned artifacts are materialized
locally.  Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 config error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .experiments import EXIT_CONFIG, RunResult, execute, write_outputs


def _load_config(config_path, seed, threads):
    if config_path is None:
        raw = {}
    else:
        try:
            raw = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise click.ClickException(f"cannot read config: {e}")
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    return raw


def _dispatch(kind: str, raw: dict | None, server: str | None) -> RunResult:
    if server is None:
        return execute(kind, raw)
    import httpx

    resp = httpx.post(f"{server.rstrip('/')}/{kind}", json={"config": raw or {}},
                      timeout=None)
    resp.raise_for_status()
    body = resp.json()
    return RunResult(body["exit_code"], body["report"],
                     [(a["name"], a["text"]) for a in body["artifacts"]])


def _finish(kind: str, result: RunResult, out, raw):
    if out is not None:
        write_outputs(result, out, raw)
        click.echo(f"wrote {out}/report.json (+{len(result.artifacts)} artifacts)")
    else:
        click.echo(result.report_json())
    if result.exit_code == EXIT_CONFIG:
        click.echo(f"config error: {result.report.get('error')}", err=True)
    sys.exit(result.exit_code)


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="JSON experiment config")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                      help="override the config seed")(fn)
    fn = click.option("--threads", type=int, default=None, help="worker-pool cap")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="write report, artifacts, and manifest here")(fn)
    fn = click.option("--server", type=str, default=None,
                      help="dispatch to a running driftlab service URL")(fn)
    return fn


@click.group()
def main():
    """Stochastic stability laboratory for Markov chains."""


def _make_command(kind: str, doc: str):
    @main.command(name=kind, help=doc)
    @_common
    def _cmd(config_path, seed, threads, out, server, _kind=kind):
        raw = _load_config(config_path, seed, threads)
        result = _dispatch(_kind, raw if (raw or _kind != "selftest") else None, server)
        _finish(_kind, result, out, raw)

    return _cmd


_make_command("simulate", "Simulate a trajectory and export it as CSV.")
_make_command("verify", "Run a drift-criterion checker and emit its certificate.")
_make_command("rate", "Estimate a convergence-rate curve and fit its decay family.")
_make_command("netctl-demo", "Reproduce the erasure-channel stability experiment.")
_make_command("selftest", "Run the fast built-in oracle checks.")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("driftlab.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
