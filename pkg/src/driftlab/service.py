"""HTTP facade over the experiment runners.

Each endpoint accepts a full experiment config, runs it server-side, and
returns the report plus the artifacts inline, so any client (the bundled CLI
included) can materialize the same files the local runners would write.
"""
from __future__ import annotations

from fastapi import FastAPI
from pydantic import BaseModel, ConfigDict

from . import __version__
from .experiments import RunResult, execute

app = FastAPI(title="driftlab", version=__version__)


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict


class Artifact(BaseModel):
    name: str
    text: str


class RunResponse(BaseModel):
    status: str
    exit_code: int
    report: dict
    artifacts: list[Artifact]


_STATUS = {0: "pass", 1: "fail", 2: "inconclusive", 3: "config_error"}


def _respond(result: RunResult) -> RunResponse:
    return RunResponse(
        status=_STATUS[result.exit_code],
        exit_code=result.exit_code,
        report=result.report,
        artifacts=[Artifact(name=n, text=t) for n, t in result.artifacts],
    )


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=RunResponse)
def simulate_endpoint(req: RunRequest):
    return _respond(execute("simulate", req.config))


@app.post("/verify", response_model=RunResponse)
def verify_endpoint(req: RunRequest):
    return _respond(execute("verify", req.config))


@app.post("/rate", response_model=RunResponse)
def rate_endpoint(req: RunRequest):
    return _respond(execute("rate", req.config))


@app.post("/netctl-demo", response_model=RunResponse)
def netctl_demo_endpoint(req: RunRequest):
    return _respond(execute("netctl-demo", req.config))


@app.post("/selftest", response_model=RunResponse)
def selftest_endpoint(req: RunRequest | None = None):
    return _respond(execute("selftest", req.config if req else None))
