"""Directional deficiency estimation with an MMD proxy.

``estimate_deficiency`` learns kernel parameters psi so that the pushforward of
the source sample through the kernel is close to the target sample, measured
by the unbiased MMD² at a bandwidth frozen from the raw pooled samples.
The reported deficiency is ``sqrt(max(mmd2, 0))``.
"""

import logging
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Any

import numpy as np

from lecam.core.divergences import (
    as_dist,
    as_samples,
    gaussian_gram,
    linear_terms,
    median_heuristic,
    mmd2_unbiased,
    tv_discrete,
)
from lecam.core.kernels import KernelFamily, KernelSpec, RngStream, apply_kernel, pathwise_apply
from lecam.errors import OptimizationError, ValidationError

logger = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 5
EVAL_STREAM = 0
FD_RELATIVE_STEP = 1e-3
QUANTIZATION_FLOOR = 1e-6
RISK_SLACK = 1e-12


class InitStrategy(StrEnum):
    ZEROS = "zeros"
    RANDOM = "random"
    MOMENT_MATCHED = "moment-matched"


class MmdEstimator(StrEnum):
    UNBIASED = "unbiased"
    LINEAR = "linear"


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 200
    learning_rate: float = 0.05
    decay: float = 0.99
    batch_size: int = 512
    restarts: int = 3
    init: InitStrategy = InitStrategy.MOMENT_MATCHED
    seed: int = 0
    eval_size: int = 2000
    eval_every: int = 20
    estimator: MmdEstimator = MmdEstimator.UNBIASED
    bandwidth: float | None = None
    canonical_order: bool = True

    def __post_init__(self):
        object.__setattr__(self, "init", InitStrategy(self.init))
        object.__setattr__(self, "estimator", MmdEstimator(self.estimator))
        for name in ("steps", "batch_size", "restarts", "eval_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"OptimizerConfig.{name} must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("OptimizerConfig.learning_rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValidationError("OptimizerConfig.decay must lie in (0, 1]")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValidationError("OptimizerConfig.bandwidth must be positive")
        if self.seed < 0:
            raise ValidationError("OptimizerConfig.seed must be unsigned")


def deficiency_proxy(mmd2: float) -> float:
    return float(np.sqrt(max(mmd2, 0.0)))


@dataclass
class DeficiencyEstimate:
    """Learned kernel parameters with the held-out divergence trace.

    ``divergence_final`` and the trace are on the deficiency proxy scale;
    ``mmd2_final`` keeps the signed MMD² behind ``divergence_final``.
    """

    kernel: KernelSpec
    divergence_final: float
    mmd2_final: float
    trace: list[tuple[int, float]]
    converged: bool
    bandwidth: float
    restart: int = 0

    @property
    def psi_star(self) -> np.ndarray:
        return np.asarray(self.kernel.params, dtype=float)

    def best_so_far(self) -> list[float]:
        return np.minimum.accumulate([v for _, v in self.trace]).tolist()

    def to_dict(self) -> dict[str, Any]:
        return {
            "psi_star": [float(p) for p in self.kernel.params],
            "divergence_final": float(self.divergence_final),
            "mmd2_final": float(self.mmd2_final),
            "trace": [[int(i), float(v)] for i, v in self.trace],
            "converged": bool(self.converged),
            "kernel": self.kernel.to_text(),
            "bandwidth": float(self.bandwidth),
            "restart": int(self.restart),
        }


def _subset(n: int, size: int, gen: np.random.Generator) -> np.ndarray:
    if n <= size:
        return np.arange(n)
    return np.sort(gen.choice(n, size=size, replace=False))


def _canonical(x: np.ndarray) -> np.ndarray:
    return x[np.lexsort(x.T[::-1])]


def _mmd2_grad_z(z: np.ndarray, y: np.ndarray, bw: float, estimator: MmdEstimator) -> np.ndarray:
    """Gradient of the batch MMD² with respect to every pushed-forward point."""
    if estimator is MmdEstimator.LINEAR:
        half = z.shape[0] // 2
        x1, x2, y1, y2 = z[0::2], z[1::2], y[0::2], y[1::2]

        def k(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            return np.exp(-np.sum((u - v) ** 2, axis=1) / (2.0 * bw**2))[:, None]

        k12, k1y, k2y = k(x1, x2), k(x1, y2), k(x2, y1)
        grad = np.empty_like(z)
        grad[0::2] = -k12 * (x1 - x2) + k1y * (x1 - y2)
        grad[1::2] = -k12 * (x2 - x1) + k2y * (x2 - y1)
        return grad / (bw**2 * half)
    n, m = z.shape[0], y.shape[0]
    kzz = gaussian_gram(z, z, bw)
    kzy = gaussian_gram(z, y, bw)
    within = kzz.sum(axis=1)[:, None] * z - kzz @ z
    cross = kzy.sum(axis=1)[:, None] * z - kzy @ y
    return (-2.0 / (n * (n - 1)) * within + 2.0 / (n * m) * cross) / bw**2


def _batch_mmd2(z: np.ndarray, y: np.ndarray, bw: float, estimator: MmdEstimator) -> float:
    if estimator is MmdEstimator.LINEAR:
        return float(np.mean(linear_terms(z, y, bw)))
    return mmd2_unbiased(z, y, bw)


class _Problem:
    """One estimation problem: fixed data, bandwidth and held-out evaluation batch."""

    def __init__(self, source: np.ndarray, target: np.ndarray, template: KernelSpec, cfg: OptimizerConfig):
        self.source = source
        self.target = target
        self.template = template
        self.cfg = cfg
        self.dim = source.shape[1]
        self.bandwidth = cfg.bandwidth or median_heuristic(source, target, seed=cfg.seed)
        eval_rng = RngStream(cfg.seed, EVAL_STREAM)
        gen = eval_rng.generator()
        self.eval_source = source[_subset(source.shape[0], cfg.eval_size, gen)]
        self.eval_target = target[_subset(target.shape[0], cfg.eval_size, gen)]
        self.eval_eps = gen.standard_normal(self.eval_source.shape)
        self.eval_rng = eval_rng.child(1)
        if template.family is KernelFamily.QUANTIZATION:
            self.lower = QUANTIZATION_FLOOR
        else:
            self.lower = 0.0

    def kernel(self, psi: np.ndarray) -> KernelSpec:
        return self.template.with_params(psi) if psi.size else self.template

    def push(self, psi: np.ndarray, x: np.ndarray, eps: np.ndarray | None, rng: RngStream) -> np.ndarray:
        k = self.kernel(psi)
        if k.has_pathwise and eps is not None:
            return pathwise_apply(k, x, eps)
        return apply_kernel(k, x, rng)

    def evaluate(self, psi: np.ndarray) -> float:
        z = self.push(psi, self.eval_source, self.eval_eps, self.eval_rng)
        return mmd2_unbiased(z, self.eval_target, self.bandwidth)

    def initial_psi(self, strategy: InitStrategy, gen: np.random.Generator) -> np.ndarray:
        family = self.template.family
        if family is KernelFamily.IDENTITY:
            return np.zeros(0)
        if family is KernelFamily.QUANTIZATION:
            delta = np.asarray(self.template.params, dtype=float)
            return delta * gen.uniform(0.5, 2.0) if strategy is InitStrategy.RANDOM else delta
        size = 1 if self.template.tied else self.dim
        if strategy is InitStrategy.ZEROS:
            return np.zeros(size)
        var_s = self.source.var(axis=0, ddof=1)
        var_t = self.target.var(axis=0, ddof=1)
        if strategy is InitStrategy.RANDOM:
            scale = np.sqrt(np.maximum(var_t, 1e-12))
            if self.template.tied:
                scale = np.array([np.sqrt(var_t.mean())])
            return gen.uniform(0.0, 1.0, size) * scale
        # Variance gap shrunk by two standard errors so equal samples start at the identity.
        se = np.sqrt(2.0 * (var_t**2 / (self.target.shape[0] - 1) + var_s**2 / (self.source.shape[0] - 1)))
        gap = var_t - var_s
        if self.template.tied:
            return np.array([np.sqrt(max(gap.mean() - 2.0 * np.sqrt(np.sum(se**2)) / gap.size, 0.0))])
        return np.sqrt(np.maximum(gap - 2.0 * se, 0.0))

    def gradient(self, psi: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        n_s, n_t = self.source.shape[0], self.target.shape[0]
        if cfg.estimator is MmdEstimator.LINEAR:
            size = min(cfg.batch_size, n_s, n_t) // 2 * 2
            if size < 2:
                raise ValidationError("Linear MMD training needs at least 2 points per set")
            # Linear terms pair consecutive rows, so keep the draw order.
            xb = self.source[gen.choice(n_s, size, replace=False)]
            yb = self.target[gen.choice(n_t, size, replace=False)]
        else:
            xb = self.source[_subset(n_s, cfg.batch_size, gen)]
            yb = self.target[_subset(n_t, cfg.batch_size, gen)]
        k = self.kernel(psi)
        if k.has_pathwise:
            eps = gen.standard_normal(xb.shape)
            z = pathwise_apply(k, xb, eps)
            g = (_mmd2_grad_z(z, yb, self.bandwidth, cfg.estimator) * eps).sum(axis=0)
            return np.array([g.sum()]) if self.template.tied else g
        # Central differences with common random numbers on both sides.
        step_rng = RngStream(int(gen.integers(2**32)))
        grad = np.zeros_like(psi)
        for i in range(psi.size):
            h = FD_RELATIVE_STEP * (1.0 + abs(psi[i]))
            up, down = psi.copy(), psi.copy()
            up[i] += h
            down[i] = max(down[i] - h, self.lower)
            f_up = _batch_mmd2(self.push(up, xb, None, step_rng), yb, self.bandwidth, cfg.estimator)
            f_down = _batch_mmd2(self.push(down, xb, None, step_rng), yb, self.bandwidth, cfg.estimator)
            grad[i] = (f_up - f_down) / (up[i] - down[i])
        return grad


def _converged(trace: list[tuple[int, float]], tol: float = 1e-3) -> bool:
    values = np.minimum.accumulate([v for _, v in trace])
    if values.size < 4:
        return False
    window = max(values.size // 4, 1)
    return bool(values[-window - 1] - values[-1] <= tol)


def _run_restart(problem: _Problem, restart: int) -> tuple[float, np.ndarray, list[tuple[int, float]]]:
    cfg = problem.cfg
    gen = RngStream(cfg.seed, restart + 1).generator()
    if restart == 0:
        strategy = cfg.init
    elif restart == 1 and cfg.init is not InitStrategy.ZEROS:
        strategy = InitStrategy.ZEROS
    else:
        strategy = InitStrategy.RANDOM
    psi = problem.initial_psi(strategy, gen)
    trace: list[tuple[int, float]] = []
    candidates: list[tuple[float, np.ndarray]] = []

    def record(iteration: int, params: np.ndarray) -> None:
        value = problem.evaluate(params)
        if not np.isfinite(value):
            raise OptimizationError(f"Divergence became {value} at iteration {iteration}", trace)
        trace.append((iteration, deficiency_proxy(value)))
        candidates.append((value, params.copy()))

    record(0, psi)
    lr = cfg.learning_rate
    tail: list[np.ndarray] = []
    steps = cfg.steps if psi.size else 0
    for t in range(1, steps + 1):
        for attempt in range(MAX_STEP_HALVINGS + 1):
            grad = problem.gradient(psi, gen)
            if np.all(np.isfinite(grad)):
                break
            if attempt == MAX_STEP_HALVINGS:
                raise OptimizationError(f"Non-finite gradient at iteration {t}", trace)
            lr /= 2.0
            logger.warning(f"Non-finite gradient at iteration {t}; step halved to {lr:.3g}")
        norm = float(np.linalg.norm(grad))
        if norm > 0:
            psi = np.maximum(psi - lr * grad / norm, problem.lower)
        lr *= cfg.decay
        if t > steps // 2:
            tail.append(psi.copy())
        if t % cfg.eval_every == 0 and t < steps:
            record(t, psi)
            logger.debug(f"restart {restart} iteration {t}: divergence {trace[-1][1]:.5f}")
    if tail:
        record(steps, np.mean(tail, axis=0))
    best = int(np.argmin([v for v, _ in candidates]))
    return candidates[best][0], candidates[best][1], trace


def estimate_deficiency(source: Any, target: Any, family: KernelSpec, cfg: OptimizerConfig | None = None) -> DeficiencyEstimate:
    """Estimate the deficiency of simulating ``target`` from ``source`` through ``family``.

    The first restart starts from ``cfg.init``, the second from the identity
    kernel and the rest at random. Each restart runs normalized gradient
    descent with fresh reparameterization noise per step and keeps the
    iterate with the lowest held-out MMD².
    """
    cfg = cfg or OptimizerConfig()
    source = as_samples(source, "source")
    target = as_samples(target, "target")
    if source.shape[1] != target.shape[1]:
        raise ValidationError(f"Dimension mismatch: source {source.shape[1]} vs target {target.shape[1]}")
    if source.shape[0] < 2 or target.shape[0] < 2:
        raise ValidationError("Deficiency estimation needs at least 2 points per set")
    if family.family is KernelFamily.HLA_DEGRADE:
        raise ValidationError("The HLA degradation kernel acts on records, not sample sets")
    if cfg.canonical_order:
        source, target = _canonical(source), _canonical(target)
    problem = _Problem(source, target, family, cfg)
    best: tuple[float, np.ndarray, list[tuple[int, float]], int] | None = None
    for r in range(cfg.restarts):
        value, psi, trace = _run_restart(problem, r)
        if best is None or value < best[0]:
            best = (value, psi, trace, r)
    value, psi, trace, restart = best
    estimate = DeficiencyEstimate(
        kernel=problem.kernel(psi),
        divergence_final=deficiency_proxy(value),
        mmd2_final=float(value),
        trace=trace,
        converged=_converged(trace),
        bandwidth=problem.bandwidth,
        restart=restart,
    )
    logger.info(f"Deficiency estimate {estimate.divergence_final:.4f} (restart {restart}, bandwidth {problem.bandwidth:.3f})")
    return estimate


def directional_gap(source: Any, target: Any, family: KernelSpec,
                    cfg: OptimizerConfig | None = None) -> tuple[DeficiencyEstimate, DeficiencyEstimate]:
    cfg = cfg or OptimizerConfig()
    forward = estimate_deficiency(source, target, family, cfg)
    reverse = estimate_deficiency(target, source, family, replace(cfg, seed=cfg.seed + 1))
    return forward, reverse


def symmetric_distortion(source: Any, target: Any, family: KernelSpec, cfg: OptimizerConfig | None = None) -> float:
    forward, reverse = directional_gap(source, target, family, cfg)
    return max(forward.divergence_final, reverse.divergence_final)


def sufficiency_check(n_obs: int = 2, n_reps: int = 2000, seed: int = 0, wrong_kernel: bool = False) -> float:
    """MMD² between samples simulated from the sample mean and fresh samples.

    Each replicate draws theta uniform on [-1, 1] and observes n_obs draws
    of N(theta, 1). The kernel rebuilds a sample from its mean t as
    ``t + R`` with R ~ N(0, I - J/n) obtained by centering standard normals;
    ``wrong_kernel`` uses uncentered R ~ N(0, I) instead.
    """
    if n_obs < 1 or n_reps < 2:
        raise ValidationError(f"Need n_obs >= 1 and n_reps >= 2, got {n_obs}, {n_reps}")
    gen = RngStream(seed).generator()
    theta = gen.uniform(-1.0, 1.0, n_reps)
    x_true = theta[:, None] + gen.standard_normal((n_reps, n_obs))
    t = (theta[:, None] + gen.standard_normal((n_reps, n_obs))).mean(axis=1)
    noise = gen.standard_normal((n_reps, n_obs))
    residual = noise if wrong_kernel else noise - noise.mean(axis=1, keepdims=True)
    x_sim = t[:, None] + residual
    bw = median_heuristic(x_sim, x_true, seed=seed)
    return mmd2_unbiased(x_sim, x_true, bw)


@dataclass(frozen=True)
class DiscreteExperiment:
    rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        for i, row in enumerate(rows):
            as_dist(row, f"row {i}")
        object.__setattr__(self, "rows", rows)

    @property
    def n_params(self) -> int:
        return self.rows.shape[0]

    @property
    def support_size(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class RiskTransfer:
    lhs: float
    rhs: float
    eps: float
    bound: float
    holds: bool

    @property
    def slack(self) -> float:
        return self.rhs + self.bound * self.eps - self.lhs


def _stochastic(matrix: Any, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    try:
        for i, row in enumerate(m):
            as_dist(row, f"{name} row {i}")
    except ValidationError as e:
        raise ValidationError(f"Malformed stochastic matrix {name}: {e}") from e
    return m


def verify_risk_transfer(e1: DiscreteExperiment, e2: DiscreteExperiment, k: Any, rule2: Any, loss: Any,
                         bound: float | None = None) -> RiskTransfer:
    """Check sup risk of the composite rule in e1 against rule2's sup risk in e2 plus B times epsilon.

    Exact matrix arithmetic: the composite rule first applies k, then rule2.
    """
    k = _stochastic(k, "k")
    rule2 = _stochastic(rule2, "rule2")
    loss = np.atleast_2d(np.asarray(loss, dtype=float))
    if k.shape != (e1.support_size, e2.support_size):
        raise ValidationError(f"Kernel shape {k.shape} does not map {e1.support_size} to {e2.support_size} outcomes")
    if e1.n_params != e2.n_params or loss.shape != (e1.n_params, rule2.shape[1]):
        raise ValidationError("Experiments, decision rule and loss table disagree on dimensions")
    bound = float(loss.max()) if bound is None else float(bound)
    if loss.min() < 0 or loss.max() > bound:
        raise ValidationError(f"Loss entries must lie in [0, {bound}]")
    composite = k @ rule2
    risk1 = np.einsum("tx,xa,ta->t", e1.rows, composite, loss)
    risk2 = np.einsum("ty,ya,ta->t", e2.rows, rule2, loss)
    pushed = e1.rows @ k
    eps = max(tv_discrete(pushed[t] / pushed[t].sum(), e2.rows[t]) for t in range(e1.n_params))
    lhs, rhs = float(risk1.max()), float(risk2.max())
    return RiskTransfer(lhs=lhs, rhs=rhs, eps=eps, bound=bound, holds=lhs <= rhs + bound * eps + RISK_SLACK)


def random_risk_instance(gen: np.random.Generator, n_params: int, support: int, n_actions: int = 3,
                         bound: float = 1.0) -> dict[str, Any]:
    """Random discrete instance; e2 mixes the exact pushforward of e1 with noise."""
    e1 = gen.dirichlet(np.ones(support), size=n_params)
    k = gen.dirichlet(np.ones(support), size=support)
    mix = gen.uniform(0.0, 1.0)
    if gen.uniform() < 0.2:
        mix = 0.0
    e2 = (1.0 - mix) * (e1 @ k) + mix * gen.dirichlet(np.ones(support), size=n_params)
    e2 /= e2.sum(axis=1, keepdims=True)
    return {
        "e1": DiscreteExperiment(e1 / e1.sum(axis=1, keepdims=True)),
        "e2": DiscreteExperiment(e2),
        "k": k / k.sum(axis=1, keepdims=True),
        "rule2": gen.dirichlet(np.ones(n_actions), size=support),
        "loss": gen.uniform(0.0, bound, size=(n_params, n_actions)),
        "bound": bound,
    }


def _leading_sigma(est: DeficiencyEstimate) -> float:
    return float(est.psi_star[0]) if est.psi_star.size else float("nan")


@dataclass
class ShiftResult:
    forward: DeficiencyEstimate
    reverse: DeficiencyEstimate
    truth_sigma0: float

    @property
    def sigma0(self) -> float:
        return _leading_sigma(self.forward)

    @property
    def ratio(self) -> float:
        return self.reverse.divergence_final / max(self.forward.divergence_final, 1e-12)

    def to_dict(self) -> dict[str, Any]:
        return {
            "forward": self.forward.to_dict(),
            "reverse": self.reverse.to_dict(),
            "sigma_0": self.sigma0,
            "truth_sigma_0": self.truth_sigma0,
            "ratio": self.ratio,
        }

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "direction": name,
                "divergence": est.divergence_final,
                "sigma_0": _leading_sigma(est),
                "sigma_norm": float(np.linalg.norm(est.psi_star)),
                "converged": est.converged,
            }
            for name, est in (("forward", self.forward), ("reverse", self.reverse))
        ]


def gaussian_shift(seed: int = 42, dim: int = 20, n: int = 5000, variance0: float = 25.0,
                   cfg: OptimizerConfig | None = None, family: KernelSpec | None = None) -> ShiftResult:
    """Clean N(0, I) against a target whose first coordinate has variance ``variance0``.

    The clean experiment simulates the noisy one exactly with sigma_0 =
    sqrt(variance0 - 1); the reverse direction cannot remove variance.
    """
    if dim < 1 or n < 2 or variance0 < 1:
        raise ValidationError(f"Need dim >= 1, n >= 2 and variance0 >= 1, got {dim}, {n}, {variance0}")
    gen = RngStream(seed, 7).generator()
    scale = np.ones(dim)
    scale[0] = np.sqrt(variance0)
    source = gen.standard_normal((n, dim))
    target = gen.standard_normal((n, dim)) * scale
    family = family or KernelSpec.additive_gaussian(np.zeros(dim))
    if family.family is not KernelFamily.ADDITIVE_GAUSSIAN:
        raise ValidationError(f"Gaussian shift needs an additive_gaussian kernel, got {family.family}")
    cfg = cfg or OptimizerConfig(seed=seed)
    forward, reverse = directional_gap(source, target, family, cfg)
    result = ShiftResult(forward, reverse, float(np.sqrt(variance0 - 1.0)))
    logger.info(f"Gaussian shift: forward {forward.divergence_final:.4f}, reverse {reverse.divergence_final:.4f}, "
                f"sigma_0 {result.sigma0:.3f} (truth {result.truth_sigma0:.3f})")
    return result
