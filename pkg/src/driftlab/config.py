"""Experiment configuration schema.

One structured JSON document drives every run kind; pydantic validation
rejects unknown fields and wrong types with the offending field named, so a
config is either fully understood or loudly refused.
"""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class NetctlParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    a: float = 2.0
    b: float = 1.0
    noise_std: float = 0.1
    K: int = 3
    Delta0: float = 1.0
    alpha: float = 0.7
    delta_zoom: float = 0.1
    L: float = 1.0
    p: float = 0.9
    F: float = 10.0  # small-set threshold: C = {Delta <= F}


class ModelBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["finite", "netctl"]
    matrix: Optional[list[list[float]]] = None
    matrix_path: Optional[str] = None
    labels: Optional[list[str]] = None
    params: Optional[NetctlParams] = None
    first_step_success: bool = False

    @field_validator("matrix")
    @classmethod
    def _square(cls, v):
        if v is not None and any(len(row) != len(v) for row in v):
            raise ValueError("matrix must be square")
        return v


class BudgetBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_samples: int = 1000
    horizon: int = 1000
    n_traj: int = 1
    n_pairs: int = 10_000
    n_max: int = 50
    k_blocks: int = 2
    grid: list = Field(default_factory=list)      # states: ints or [x, Delta] pairs
    grid_in_C: list = Field(default_factory=list)


class DriftBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    V: dict
    C: dict
    f: Optional[dict] = None
    delta: Optional[dict] = None
    lam: float = Field(default=float("nan"), alias="lambda")
    b: float = 0.0
    epsilon: float = float("nan")


class RateRunBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["exact", "coupling", "empirical"] = "exact"
    x0: int | list[float] = 0
    minorization: Optional[dict] = None  # {"C": set block, "n0": 1}


class ExperimentConfig(BaseModel):
    """Everything a run needs; identical config + seed gives identical reports."""

    model_config = ConfigDict(extra="forbid")

    model: ModelBlock
    seed: int = 0
    threads: int = 1
    policy: Optional[dict] = None
    drift: Optional[DriftBlock] = None
    rate: Optional[dict] = None          # RateFunction config block
    rate_run: Optional[RateRunBlock] = None
    theorem: Optional[str] = None
    a_test: float = 1.2
    x0: int | list[float] = 0
    budgets: BudgetBlock = Field(default_factory=BudgetBlock)

    @field_validator("seed")
    @classmethod
    def _u64(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        return v

    @field_validator("threads")
    @classmethod
    def _threads(cls, v):
        if v < 1:
            raise ValueError("threads must be >= 1")
        return v
