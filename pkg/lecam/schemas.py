"""Documented shapes of every file the runner writes."""

from typing import Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class Row(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DeficiencyEstimateModel(Row):
    psi_star: list[float]
    divergence_final: float = Field(ge=0.0)
    mmd2_final: float
    trace: list[tuple[int, float]]
    converged: bool
    kernel: str
    bandwidth: float = Field(gt=0.0)
    restart: int = Field(ge=0)


class GaussianShiftPayload(Row):
    forward: DeficiencyEstimateModel
    reverse: DeficiencyEstimateModel
    sigma_0: float
    truth_sigma_0: float
    ratio: float


class ShiftRow(Row):
    direction: Literal["forward", "reverse"]
    divergence: float = Field(ge=0.0)
    sigma_0: float
    sigma_norm: float = Field(ge=0.0)
    converged: bool


class ControlRow(Row):
    policy: str
    domain: Literal["source", "target"]
    mean_return: float
    se: float
    gain_x: float
    gain_y: float | None = None
    sigma_hat_x: float | None = None
    sigma_hat_y: float | None = None
    weight: float | None = None
    noisy_gain: float | None = None


class HlaRow(Row):
    method: Literal["Naive", "EM", "LeCam"]
    allele_acc: float = Field(ge=0.0, le=1.0)
    haplotype_acc: float = Field(ge=0.0, le=1.0)
    phase_acc: float | None = None
    freq_corr: float | None = None


class PopulationRow(Row):
    haplotype: str
    freq: float = Field(ge=0.0, le=1.0)


class CheckRow(Row):
    test: str
    metric: str
    result: str
    status: Literal["Confirmed", "Rejected"]


class RiskRow(Row):
    seed: int
    n_theta: int = Field(ge=2)
    m: int = Field(ge=2)
    lhs: float
    rhs: float
    eps: float = Field(ge=0.0, le=1.0)
    slack: float
    holds: bool


class Manifest(Row):
    experiment: str
    seed: int
    config_hash: str = Field(min_length=64, max_length=64)
    overrides: dict
    format: Literal["csv", "json"]
    version: str
    status: Literal["ok", "failed"]
    wall_time: float = Field(ge=0.0)
    started_at: str
    artifacts: list[str]
    error: str | None = None


ROW_SCHEMAS: dict[str, type[Row]] = {
    "gaussian-shift": ShiftRow,
    "control-1d": ControlRow,
    "control-2d": ControlRow,
    "hla": HlaRow,
    "verify": CheckRow,
    "risk-bound": RiskRow,
}


def validate_table(experiment: str, frame: pd.DataFrame) -> list[Row]:
    """Validate every row of a result table; NaN cells read as missing."""
    schema = ROW_SCHEMAS[experiment]
    records = frame.astype(object).where(frame.notna(), None).to_dict(orient="records")
    return [schema.model_validate(record) for record in records]
