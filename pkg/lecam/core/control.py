"""Linear control with degraded observations.

Dynamics ``s[t+1] = s[t] + a[t] + eps[t]`` with observations ``o[t] = s[t] + eta[t]``
and diagonal linear policies ``a = w * (c * o)``. Episodes pay
``sum_t |s[t]|^2 + lam |a[t-1]|^2`` and report its negative as the return.

Policies are fitted by grid search on the exact expected cost, which the
diagonal dynamics give dimension by dimension through a variance recursion.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np
import pandas as pd

from lecam.core.divergences import median_heuristic, mmd2_unbiased
from lecam.core.estimator import DeficiencyEstimate, OptimizerConfig, estimate_deficiency
from lecam.core.kernels import KernelSpec, RngStream
from lecam.errors import ValidationError

logger = logging.getLogger(__name__)

Domain = Literal["source", "target"]

GAIN_GRID = np.round(np.arange(-1.5, 0.5 + 1e-9, 0.01), 2)
ENCODER_GRID = np.concatenate([np.geomspace(1.0, 1e-3, 61), [0.0]])
TRAP_WEIGHTS = (1e2, 1e4, 1e6, 1e8, 1e10)
INVARIANT_REFERENCE_SIZE = 1000
# Damped gain for calibration episodes; keeps both domains near rest after the transient.
BEHAVIOUR_GAIN = -0.4
CSV_COLUMNS = ["policy", "domain", "mean_return", "se", "gain_x", "gain_y", "sigma_hat_x", "sigma_hat_y"]


@dataclass(frozen=True)
class ControlConfig:
    dim: int = 1
    horizon: int = 50
    episodes: int = 200
    s0_scale: float = 5.0
    sigma_proc: tuple[float, ...] = (0.1,)
    sigma_obs_source: tuple[float, ...] = (0.0,)
    sigma_obs_target: tuple[float, ...] = (1.0,)
    action_penalty: float = 0.01
    invariant_weight: float = 1e10
    calibration_size: int = 2000
    lecam_steps: int = 100
    lecam_learning_rate: float = 0.02
    seed: int = 42

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError(f"Control dim must be 1 or 2, got {self.dim}")
        if self.horizon < 1 or self.episodes < 1 or self.calibration_size < 2:
            raise ValidationError("horizon and episodes must be positive, calibration_size at least 2")
        if self.s0_scale < 0 or self.action_penalty < 0 or self.invariant_weight < 0:
            raise ValidationError("s0_scale, action_penalty and invariant_weight must be non-negative")
        for name in ("sigma_proc", "sigma_obs_source", "sigma_obs_target"):
            values = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if len(values) not in (1, self.dim) or any(v < 0 or not np.isfinite(v) for v in values):
                raise ValidationError(f"{name} needs 1 or {self.dim} non-negative entries, got {values}")
            object.__setattr__(self, name, values)

    @classmethod
    def one_d(cls, **overrides: Any) -> "ControlConfig":
        return cls(**overrides)

    @classmethod
    def two_d(cls, **overrides: Any) -> "ControlConfig":
        params: dict[str, Any] = {
            "dim": 2,
            "sigma_proc": (0.1, 0.1),
            "sigma_obs_source": (0.0, 0.0),
            "sigma_obs_target": (0.1, 2.0),
        }
        params.update(overrides)
        return cls(**params)

    def vector(self, name: str) -> np.ndarray:
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.dim,)).copy()

    def sigma_obs(self, domain: Domain) -> np.ndarray:
        if domain not in ("source", "target"):
            raise ValidationError(f"Unknown domain '{domain}'")
        return self.vector(f"sigma_obs_{domain}")


@dataclass(frozen=True)
class LinearPolicy:
    gain: tuple[float, ...]
    encoder: tuple[float, ...] = field(default=())
    label: str = "policy"

    def __post_init__(self):
        gain = tuple(float(g) for g in np.atleast_1d(self.gain))
        encoder = tuple(float(c) for c in np.atleast_1d(self.encoder)) if len(self.encoder) else (1.0,) * len(gain)
        if len(encoder) != len(gain) or not np.all(np.isfinite(gain + encoder)):
            raise ValidationError(f"Policy gain {gain} and encoder {encoder} must be finite and equally long")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "encoder", encoder)

    @property
    def effective_gain(self) -> np.ndarray:
        return np.asarray(self.gain) * np.asarray(self.encoder)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(self.gain) * (np.asarray(self.encoder) * obs)


@dataclass
class EpisodeResult:
    ret: float
    trajectory: np.ndarray
    policy: str


def rollout(cfg: ControlConfig, pol: LinearPolicy, domain: Domain, rng: RngStream) -> EpisodeResult:
    if len(pol.gain) != cfg.dim:
        raise ValidationError(f"Policy has {len(pol.gain)} gains for a {cfg.dim}-d environment")
    sigma_obs = cfg.sigma_obs(domain)
    sigma_proc = cfg.vector("sigma_proc")
    gen = rng.generator()
    # Noise is drawn up front so every policy and domain sees the same draws.
    s = cfg.s0_scale * gen.standard_normal(cfg.dim)
    obs_noise = gen.standard_normal((cfg.horizon, cfg.dim))
    proc_noise = gen.standard_normal((cfg.horizon, cfg.dim))
    trajectory = np.empty((cfg.horizon + 1, cfg.dim))
    trajectory[0] = s
    ret = 0.0
    for t in range(cfg.horizon):
        a = pol.act(s + sigma_obs * obs_noise[t])
        s = s + a + sigma_proc * proc_noise[t]
        trajectory[t + 1] = s
        ret -= float(s @ s + cfg.action_penalty * (a @ a))
    return EpisodeResult(ret=ret, trajectory=trajectory, policy=pol.label)


def expected_cost(gains: Any, cfg: ControlConfig, dim: int, sigma_obs: float) -> np.ndarray:
    """Exact expected episode cost of scalar gains on one dimension."""
    g = np.asarray(gains, dtype=float)
    sigma_proc = cfg.vector("sigma_proc")[dim]
    var = np.full(g.shape, cfg.s0_scale**2)
    total = np.zeros(g.shape)
    for _ in range(cfg.horizon):
        action = g**2 * (var + sigma_obs**2)
        var = (1.0 + g) ** 2 * var + g**2 * sigma_obs**2 + sigma_proc**2
        total += var + cfg.action_penalty * action
    return total


def _best_gains(cfg: ControlConfig, sigma_obs: np.ndarray) -> np.ndarray:
    return np.array([GAIN_GRID[np.argmin(expected_cost(GAIN_GRID, cfg, d, sigma_obs[d]))] for d in range(cfg.dim)])


def train_naive(cfg: ControlConfig, rng: RngStream | None = None) -> LinearPolicy:
    gains = _best_gains(cfg, cfg.sigma_obs("source"))
    logger.info(f"Naive gains {gains.tolist()}")
    return LinearPolicy(tuple(gains), label="naive")


def calibration_inflation(gain: float = BEHAVIOUR_GAIN) -> float:
    """Ratio of the noise a kernel must add to the true observation noise, under calibration feedback.

    Closed-loop target states also carry ``gain * eta``, so the stationary
    observation variance gap is ``sigma_obs**2 * (1 + gain**2 / (1 - (1 + gain)**2))``.
    """
    if not -2.0 < gain < 0.0:
        raise ValidationError(f"Calibration gain must lie in (-2, 0), got {gain}")
    return float(np.sqrt(1.0 + gain**2 / (1.0 - (1.0 + gain) ** 2)))


def calibration_observations(cfg: ControlConfig, domain: Domain, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Final observations ``o = s + eta`` of independent calibration episodes, no returns.

    Episodes run under the fixed gain BEHAVIOUR_GAIN. Both domains replay the
    same initial states, process noise and eta draws; only the observation
    noise scale differs.
    """
    n = size or cfg.calibration_size
    gen = rng.child(0).generator()
    behaviour = LinearPolicy((BEHAVIOUR_GAIN,) * cfg.dim, label="behaviour")
    sigma_obs = cfg.sigma_obs(domain)
    sigma_proc = cfg.vector("sigma_proc")
    s = cfg.s0_scale * gen.standard_normal((n, cfg.dim))
    for _ in range(cfg.horizon):
        obs = s + sigma_obs * gen.standard_normal((n, cfg.dim))
        s = s + behaviour.act(obs) + sigma_proc * gen.standard_normal((n, cfg.dim))
    return s + sigma_obs * gen.standard_normal((n, cfg.dim))


def train_invariant(cfg: ControlConfig, mmd_weight: float, rng: RngStream) -> LinearPolicy:
    """Jointly fit encoder scales c and gains w on the source cost plus an MMD alignment penalty.

    Coordinate search over c; for fixed c each gain is the exact best grid gain.
    """
    if mmd_weight <= 0:
        raise ValidationError(f"mmd_weight must be positive, got {mmd_weight}")
    size = min(cfg.calibration_size, INVARIANT_REFERENCE_SIZE)
    source = calibration_observations(cfg, "source", rng, size)
    target = calibration_observations(cfg, "target", rng, size)
    bw = median_heuristic(source, target, seed=cfg.seed)
    sigma_src = cfg.sigma_obs("source")
    # cost_table[d][i, j]: expected cost with encoder ENCODER_GRID[i] and gain GAIN_GRID[j]
    cost_table = [expected_cost(np.outer(ENCODER_GRID, GAIN_GRID), cfg, d, sigma_src[d]) for d in range(cfg.dim)]
    best_w = [GAIN_GRID[np.argmin(table, axis=1)] for table in cost_table]
    best_cost = [table.min(axis=1) for table in cost_table]

    idx = np.zeros(cfg.dim, dtype=int)

    def objective(choice: np.ndarray) -> float:
        c = ENCODER_GRID[choice]
        control = sum(best_cost[d][choice[d]] for d in range(cfg.dim))
        return float(control + mmd_weight * mmd2_unbiased(source * c, target * c, bw))

    current = objective(idx)
    for _ in range(2 if cfg.dim > 1 else 1):
        for d in range(cfg.dim):
            for i in range(ENCODER_GRID.size):
                trial = idx.copy()
                trial[d] = i
                value = objective(trial)
                if value < current:
                    idx, current = trial, value
    encoder = ENCODER_GRID[idx]
    gains = np.array([best_w[d][idx[d]] for d in range(cfg.dim)])
    logger.info(f"Invariant encoder {encoder.tolist()} gains {gains.tolist()} (weight {mmd_weight:g})")
    return LinearPolicy(tuple(gains), tuple(encoder), label="invariant")


def train_lecam(cfg: ControlConfig, rng: RngStream) -> tuple[LinearPolicy, np.ndarray]:
    policy, sigma_hat, _ = fit_lecam(cfg, rng)
    return policy, sigma_hat


def fit_lecam(cfg: ControlConfig, rng: RngStream) -> tuple[LinearPolicy, np.ndarray, DeficiencyEstimate]:
    """Learn the clean-to-noisy observation kernel, then train on simulated observations.

    The kernel is fitted on columns scaled to unit pooled variance and mapped
    back; a diagonal additive kernel commutes with that scaling.
    """
    source = calibration_observations(cfg, "source", rng)
    target = calibration_observations(cfg, "target", rng)
    scale = np.vstack([source, target]).std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    opt = OptimizerConfig(steps=cfg.lecam_steps, learning_rate=cfg.lecam_learning_rate, seed=cfg.seed,
                          eval_size=cfg.calibration_size)
    estimate = estimate_deficiency(source / scale, target / scale, KernelSpec.additive_gaussian(np.zeros(cfg.dim)), opt)
    sigma_hat = estimate.kernel.sigma(cfg.dim) * scale
    estimate = replace(estimate, kernel=estimate.kernel.with_params(sigma_hat))
    simulated_obs = np.sqrt(cfg.sigma_obs("source") ** 2 + sigma_hat**2)
    gains = _best_gains(cfg, simulated_obs)
    logger.info(f"Le Cam sigma_hat {np.round(sigma_hat, 4).tolist()} gains {gains.tolist()}")
    return LinearPolicy(tuple(gains), label="lecam"), sigma_hat, estimate


def evaluate_policy(cfg: ControlConfig, pol: LinearPolicy, domain: Domain, rng: RngStream) -> tuple[float, float]:
    returns = np.array([rollout(cfg, pol, domain, rng.child(ep)).ret for ep in range(cfg.episodes)])
    se = float(returns.std(ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else 0.0
    return float(returns.mean()), se


def _row(pol: LinearPolicy, domain: str, mean: float, se: float, sigma_hat: np.ndarray | None) -> dict[str, Any]:
    gain = pol.effective_gain
    row = {
        "policy": pol.label,
        "domain": domain,
        "mean_return": mean,
        "se": se,
        "gain_x": float(gain[0]),
        "gain_y": float(gain[1]) if gain.size > 1 else np.nan,
        "sigma_hat_x": np.nan,
        "sigma_hat_y": np.nan,
    }
    if sigma_hat is not None:
        row["sigma_hat_x"] = float(sigma_hat[0])
        row["sigma_hat_y"] = float(sigma_hat[1]) if sigma_hat.size > 1 else np.nan
    return row


def evaluate_suite(cfg: ControlConfig, rng: RngStream) -> pd.DataFrame:
    """Train the naive, invariant and Le Cam policies and evaluate each on both domains."""
    naive = train_naive(cfg, rng)
    invariant = train_invariant(cfg, cfg.invariant_weight, rng.child(1))
    lecam, sigma_hat = train_lecam(cfg, rng.child(2))
    eval_rng = rng.child(3)
    rows = []
    for pol, sig in ((naive, None), (invariant, None), (lecam, sigma_hat)):
        for domain in ("source", "target"):
            mean, se = evaluate_policy(cfg, pol, domain, eval_rng)
            rows.append(_row(pol, domain, mean, se, sig))
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def invariance_trap_sweep(cfg: ControlConfig, rng: RngStream, weights: tuple[float, ...] = TRAP_WEIGHTS) -> pd.DataFrame:
    """Effective invariant gain on the noisiest dimension across alignment weights."""
    noisy = int(np.argmax(cfg.sigma_obs("target")))
    eval_rng = rng.child(3)
    rows = []
    for weight in weights:
        pol = train_invariant(cfg, weight, rng.child(1))
        pol = LinearPolicy(pol.gain, pol.encoder, label=f"invariant@{weight:g}")
        mean, se = evaluate_policy(cfg, pol, "target", eval_rng)
        row = _row(pol, "target", mean, se, None)
        row["weight"] = weight
        row["noisy_gain"] = float(abs(pol.effective_gain[noisy]))
        rows.append(row)
    return pd.DataFrame(rows, columns=[*CSV_COLUMNS, "weight", "noisy_gain"])
