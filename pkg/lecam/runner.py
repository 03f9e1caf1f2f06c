"""Experiment dispatch, artifact writing and the run ledger.

Data files depend only on the RunConfig; the manifest next to them carries
the timing and status of the run that produced them.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from lecam import __version__, db
from lecam.config import Experiment, OutputFormat, RunConfig, ledger_enabled
from lecam.core.control import TRAP_WEIGHTS, ControlConfig, evaluate_suite, invariance_trap_sweep
from lecam.core.estimator import OptimizerConfig, gaussian_shift, random_risk_instance, verify_risk_transfer
from lecam.core.hla import evaluate_reconstructors
from lecam.core.kernels import RngStream
from lecam.core.verification import CHECKS, report_table, run_all
from lecam.errors import ExperimentError
from lecam.schemas import Manifest

logger = logging.getLogger(__name__)

OPTIMIZER_FIELDS = ("steps", "learning_rate", "decay", "batch_size", "restarts", "init", "eval_size", "eval_every",
                    "estimator", "bandwidth")
CONTROL_FIELDS = ("horizon", "episodes", "s0_scale", "sigma_proc", "sigma_obs_source", "sigma_obs_target",
                  "action_penalty", "invariant_weight", "calibration_size", "lecam_steps", "lecam_learning_rate")


@dataclass
class ExperimentResult:
    table: pd.DataFrame
    payload: dict[str, Any]
    passed: bool = True
    failure: str | None = None
    extra_tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    report: str | None = None


def _pick(cfg: RunConfig, names: tuple[str, ...]) -> dict[str, Any]:
    return {name: cfg.overrides[name] for name in names if name in cfg.overrides}


def run_gaussian_shift(cfg: RunConfig) -> ExperimentResult:
    opt = OptimizerConfig(seed=cfg.seed, **_pick(cfg, OPTIMIZER_FIELDS))
    result = gaussian_shift(
        seed=cfg.seed,
        dim=cfg.get("dim", 20),
        n=cfg.get("n", 5000),
        variance0=cfg.get("variance0", 25.0),
        cfg=opt,
        family=cfg.get("kernel"),
    )
    return ExperimentResult(table=pd.DataFrame(result.rows()), payload=result.to_dict())


def run_control(cfg: RunConfig) -> ExperimentResult:
    params = {**_pick(cfg, CONTROL_FIELDS), "seed": cfg.seed}
    control = ControlConfig.two_d(**params) if cfg.experiment is Experiment.CONTROL_2D else ControlConfig.one_d(**params)
    rng = RngStream(cfg.seed)
    suite = evaluate_suite(control, rng)
    sweep = invariance_trap_sweep(control, rng, tuple(cfg.get("trap_weights", TRAP_WEIGHTS)))
    table = pd.concat([suite, sweep], ignore_index=True)
    means = suite[suite["domain"] == "target"].set_index("policy")["mean_return"]
    payload = {
        "dim": control.dim,
        "rows": table.to_dict(orient="records"),
        "target_ordering": sorted(means.index, key=lambda p: -means[p]),
    }
    return ExperimentResult(table=table, payload=payload)


def run_hla(cfg: RunConfig) -> ExperimentResult:
    result = evaluate_reconstructors(
        cfg.seed,
        n_train=cfg.get("n_train", 10000),
        n_test=cfg.get("n_test", 1000),
        em_iters=cfg.get("em_iters", 500),
        em_tol=cfg.get("em_tol", 1e-8),
    )
    population = result.population.to_frame()
    payload = {
        "metrics": result.metrics.to_dict(orient="records"),
        "population": population.to_dict(orient="records"),
        "population_version": result.population.version,
        "n_double_het": result.n_double_het,
        "lecam_fallbacks": result.fallbacks,
        "em_log_likelihoods": [float(v) for v in result.em.log_likelihoods],
        **result.details,
    }
    return ExperimentResult(
        table=result.metrics,
        payload=payload,
        passed=bool(result.em.monotone),
        failure=None if result.em.monotone else "EM log-likelihood decreased",
        extra_tables={"population": population},
    )


def run_verify(cfg: RunConfig) -> ExperimentResult:
    names = list(cfg.get("checks", ())) or list(CHECKS)
    reports = run_all(cfg.seed, names)
    table = report_table(reports)
    failed = [r.name for r in reports if not r.passed]
    return ExperimentResult(
        table=table,
        payload={"checks": [r.to_dict() for r in reports]},
        passed=not failed,
        failure=f"checks failed: {', '.join(failed)}" if failed else None,
        report=table.to_string(index=False),
    )


def run_risk_bound(cfg: RunConfig) -> ExperimentResult:
    bound = cfg.get("bound", 1.0)
    rows = []
    for i in range(cfg.get("instances", 1000)):
        gen = RngStream(cfg.seed).child(i).generator()
        n_theta, m = int(gen.integers(2, 5)), int(gen.integers(2, 6))
        inst = random_risk_instance(gen, n_theta, m, bound=bound)
        res = verify_risk_transfer(inst["e1"], inst["e2"], inst["k"], inst["rule2"], inst["loss"], inst["bound"])
        rows.append({"seed": i, "n_theta": n_theta, "m": m, "lhs": res.lhs, "rhs": res.rhs, "eps": res.eps,
                     "slack": res.slack, "holds": res.holds})
    table = pd.DataFrame(rows, columns=["seed", "n_theta", "m", "lhs", "rhs", "eps", "slack", "holds"])
    violations = int((~table["holds"]).sum()) if len(table) else 0
    return ExperimentResult(
        table=table,
        payload={"rows": table.to_dict(orient="records"), "all_hold": violations == 0, "violations": violations},
        passed=violations == 0,
        failure=f"{violations} risk-transfer violations" if violations else None,
    )


EXPERIMENTS = {
    Experiment.GAUSSIAN_SHIFT: run_gaussian_shift,
    Experiment.CONTROL_1D: run_control,
    Experiment.CONTROL_2D: run_control,
    Experiment.HLA: run_hla,
    Experiment.VERIFY: run_verify,
    Experiment.RISK_BOUND: run_risk_bound,
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_ | bool):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        return None if math.isnan(value) else float(value)
    return value


def _dump_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_artifacts(cfg: RunConfig, result: ExperimentResult) -> list[Path]:
    path = cfg.output_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.format is OutputFormat.JSON:
        _dump_json(path, result.payload)
    else:
        result.table.to_csv(path, index=False)
    written = [path]
    for name, frame in result.extra_tables.items():
        extra = path.with_name(f"{path.stem}.{name}.csv")
        frame.to_csv(extra, index=False)
        written.append(extra)
    return written


def record_run(manifest: Manifest) -> None:
    """Append the run to the ledger; ledger trouble is logged, never raised."""
    if not ledger_enabled():
        return
    from lecam.models import Run

    session = db.SessionLocal()
    try:
        session.add(Run(
            experiment=manifest.experiment,
            seed=manifest.seed,
            config_hash=manifest.config_hash,
            status=manifest.status,
            wall_time=manifest.wall_time,
            version=manifest.version,
            artifacts=manifest.artifacts,
            error=manifest.error,
        ))
        session.commit()
    except Exception as e:
        logger.error(f"Could not record run in ledger: {str(e)}")
        session.rollback()
    finally:
        session.close()


def execute(cfg: RunConfig) -> tuple[Manifest, ExperimentResult | None]:
    """Run one experiment, write its artifacts and manifest, and log it to the ledger.

    Raises ExperimentError after writing a failed manifest when the experiment
    itself raises. A completed run whose checks fail returns a failed manifest.
    """
    started_at = datetime.now(UTC).isoformat()
    start = time.perf_counter()
    logger.info(f"Running {cfg.experiment.value} with seed {cfg.seed} (config {cfg.config_hash()[:12]})")
    result: ExperimentResult | None = None
    artifacts: list[Path] = []
    error: str | None = None
    try:
        result = EXPERIMENTS[cfg.experiment](cfg)
        artifacts = write_artifacts(cfg, result)
        if not result.passed:
            error = result.failure or "experiment reported failure"
    except Exception as e:
        logger.error(f"{cfg.experiment.value} failed: {str(e)}", exc_info=True)
        error = f"{type(e).__name__}: {e}"
        result = None

    manifest = Manifest(
        experiment=cfg.experiment.value,
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        overrides=_jsonable(cfg.canonical()["overrides"]),
        format=cfg.format.value,
        version=__version__,
        status="failed" if error else "ok",
        wall_time=time.perf_counter() - start,
        started_at=started_at,
        artifacts=[str(p) for p in artifacts],
        error=error,
    )
    manifest_path = cfg.manifest_path()
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(manifest_path, manifest.model_dump())
    record_run(manifest)
    if result is None:
        raise ExperimentError(f"{cfg.experiment.value} failed: {error}")
    logger.info(f"{cfg.experiment.value} finished in {manifest.wall_time:.1f}s with status {manifest.status}")
    return manifest, result
