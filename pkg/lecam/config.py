import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from lecam.core.estimator import InitStrategy, MmdEstimator
from lecam.core.kernels import KernelFamily, KernelSpec
from lecam.errors import ConfigError, ValidationError

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42


class Experiment(StrEnum):
    GAUSSIAN_SHIFT = "gaussian-shift"
    CONTROL_1D = "control-1d"
    CONTROL_2D = "control-2d"
    HLA = "hla"
    VERIFY = "verify"
    RISK_BOUND = "risk-bound"


class OutputFormat(StrEnum):
    CSV = "csv"
    JSON = "json"


INT_KEYS = {
    "seed", "steps", "batch_size", "restarts", "eval_size", "eval_every", "dim", "n",
    "horizon", "episodes", "calibration_size", "lecam_steps",
    "n_train", "n_test", "em_iters", "instances",
}
FLOAT_KEYS = {
    "learning_rate", "decay", "bandwidth", "variance0",
    "s0_scale", "action_penalty", "invariant_weight", "lecam_learning_rate",
    "em_tol", "bound",
}
VECTOR_KEYS = {"sigma_proc", "sigma_obs_source", "sigma_obs_target", "trap_weights"}
TEXT_KEYS = {"experiment", "format", "out", "init", "estimator", "kernel", "checks"}

OPTIMIZER_KEYS = {"steps", "learning_rate", "decay", "batch_size", "restarts", "init", "eval_size", "eval_every",
                  "estimator", "bandwidth"}
CONTROL_KEYS = {"horizon", "episodes", "s0_scale", "sigma_proc", "sigma_obs_source", "sigma_obs_target",
                "action_penalty", "invariant_weight", "calibration_size", "lecam_steps", "lecam_learning_rate",
                "trap_weights"}

EXPERIMENT_KEYS: dict[Experiment, set[str]] = {
    Experiment.GAUSSIAN_SHIFT: OPTIMIZER_KEYS | {"dim", "n", "variance0", "kernel"},
    Experiment.CONTROL_1D: CONTROL_KEYS,
    Experiment.CONTROL_2D: CONTROL_KEYS,
    Experiment.HLA: {"n_train", "n_test", "em_iters", "em_tol"},
    Experiment.VERIFY: {"checks"},
    Experiment.RISK_BOUND: {"instances", "bound"},
}


def output_dir() -> Path:
    return Path(os.getenv("LECAM_OUTPUT_DIR", "results"))


def log_level() -> str:
    return os.getenv("LECAM_LOG_LEVEL", "INFO").upper()


def ledger_enabled() -> bool:
    return os.getenv("LECAM_LEDGER", "1").strip().lower() not in ("0", "false", "no", "off")


@dataclass(frozen=True)
class RunConfig:
    experiment: Experiment = Experiment.GAUSSIAN_SHIFT
    seed: int = DEFAULT_SEED
    overrides: dict[str, Any] = field(default_factory=dict)
    out: Path | None = None
    format: OutputFormat = OutputFormat.CSV

    def __post_init__(self):
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "format", OutputFormat(self.format))
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        allowed = EXPERIMENT_KEYS[self.experiment]
        unknown = sorted(set(self.overrides) - allowed)
        if unknown:
            raise ConfigError(f"Unknown key(s) for {self.experiment.value}: {', '.join(unknown)}")

    def get(self, key: str, default: Any = None) -> Any:
        return self.overrides.get(key, default)

    def with_flags(self, seed: int | None = None, out: Path | str | None = None,
                   fmt: OutputFormat | str | None = None) -> "RunConfig":
        """Command-line flags win over the config file."""
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if out is not None:
            changes["out"] = Path(out)
        if fmt is not None:
            changes["format"] = OutputFormat(fmt)
        return replace(self, **changes)

    def output_path(self) -> Path:
        if self.out is not None:
            return self.out
        return output_dir() / f"{self.experiment.value}-{self.seed}.{self.format.value}"

    def manifest_path(self) -> Path:
        path = self.output_path()
        return path.with_name(f"{path.stem}.manifest.json")

    def canonical(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment.value,
            "seed": self.seed,
            "overrides": {k: _jsonable(self.overrides[k]) for k in sorted(self.overrides)},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, KernelSpec):
        return value.to_text()
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, StrEnum):
        return value.value
    return value


def _coerce(key: str, raw: str, line: int) -> Any:
    try:
        if key in INT_KEYS:
            value = int(raw)
            if value < 0:
                raise ValueError("must be non-negative")
            return value
        if key in FLOAT_KEYS:
            return float(raw)
        if key in VECTOR_KEYS:
            parts = [p.strip() for p in raw.split(",")]
            if not all(parts):
                raise ValueError("empty vector entry")
            return tuple(float(p) for p in parts)
        if key == "init":
            return InitStrategy(raw)
        if key == "estimator":
            return MmdEstimator(raw)
        if key == "kernel":
            kernel = KernelSpec.parse(raw)
            if kernel.family is not KernelFamily.ADDITIVE_GAUSSIAN:
                raise ValueError("only additive_gaussian kernels apply")
            return kernel
        if key == "experiment":
            return Experiment(raw)
        if key == "format":
            return OutputFormat(raw)
        if key == "checks":
            return tuple(p.strip().upper() for p in raw.split(",") if p.strip())
        return raw
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"Invalid value for '{key}': {raw!r} ({e})", line) from e


def parse_config(text: str, experiment: Experiment | str | None = None) -> RunConfig:
    """Read a flat ``key = value`` config; ``#`` starts a comment.

    ``experiment`` (from the command line) takes precedence over an
    ``experiment`` key in the file; the two must agree when both are given.
    """
    known = INT_KEYS | FLOAT_KEYS | VECTOR_KEYS | TEXT_KEYS
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        content = raw_line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, raw = content.partition("=")
        key, raw = key.strip().lower(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"Expected 'key = value', got {raw_line.strip()!r}", number)
        if key not in known:
            raise ConfigError(f"Unknown key '{key}'", number)
        if key in values:
            raise ConfigError(f"Duplicate key '{key}'", number)
        if not raw:
            raise ConfigError(f"Missing value for '{key}'", number)
        values[key] = _coerce(key, raw, number)
        lines[key] = number

    file_experiment = values.pop("experiment", None)
    if experiment is not None:
        try:
            experiment = Experiment(experiment)
        except ValueError as e:
            raise ConfigError(f"Unknown experiment '{experiment}'") from e
        if file_experiment is not None and file_experiment is not experiment:
            raise ConfigError(f"Config is for '{file_experiment.value}', not '{experiment.value}'", lines["experiment"])
    else:
        experiment = file_experiment or Experiment.GAUSSIAN_SHIFT

    seed = values.pop("seed", DEFAULT_SEED)
    fmt = values.pop("format", OutputFormat.CSV)
    out = values.pop("out", None)
    allowed = EXPERIMENT_KEYS[experiment]
    for key in values:
        if key not in allowed:
            raise ConfigError(f"Key '{key}' does not apply to {experiment.value}", lines[key])
    logger.debug(f"Parsed config for {experiment.value}: {sorted(values)}")
    return RunConfig(experiment=experiment, seed=seed, overrides=values, out=Path(out) if out else None, format=fmt)


def load_config(path: Path | str | None, experiment: Experiment | str | None = None) -> RunConfig:
    if path is None:
        return parse_config("", experiment)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    return parse_config(text, experiment)
