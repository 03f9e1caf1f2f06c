import logging
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any

import numpy as np

from lecam.core.divergences import as_samples
from lecam.errors import ValidationError

logger = logging.getLogger(__name__)


class KernelFamily(StrEnum):
    IDENTITY = "identity"
    ADDITIVE_GAUSSIAN = "additive_gaussian"
    QUANTIZATION = "quantization"
    HLA_DEGRADE = "hla_degrade"


_PARAM_NAMES = {
    KernelFamily.IDENTITY: None,
    KernelFamily.ADDITIVE_GAUSSIAN: "sigma",
    KernelFamily.QUANTIZATION: "delta",
    KernelFamily.HLA_DEGRADE: None,
}


@dataclass(frozen=True)
class RngStream:
    """Seeded random stream; the same (seed, stream, path) always replays the same draws."""

    seed: int
    stream: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ValidationError(f"Seed and stream must be unsigned, got {self.seed}, {self.stream}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, *self.path))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, key: int) -> "RngStream":
        return replace(self, path=(*self.path, int(key)))


@dataclass(frozen=True)
class KernelSpec:
    """A Markov kernel family with its current parameter vector.

    ``tied`` marks an additive-Gaussian kernel whose single sigma applies to
    every dimension.
    """

    family: KernelFamily
    params: tuple[float, ...] = field(default_factory=tuple)
    tied: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = np.asarray(self.params, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"Kernel parameters must be finite, got {self.params}")
        if self.family is KernelFamily.ADDITIVE_GAUSSIAN and np.any(p < 0):
            raise ValidationError(f"Additive Gaussian sigma must be non-negative, got {self.params}")
        if self.family is KernelFamily.QUANTIZATION and (p.size != 1 or p[0] <= 0):
            raise ValidationError(f"Quantization needs one positive bin width, got {self.params}")
        if self.family in (KernelFamily.IDENTITY, KernelFamily.HLA_DEGRADE) and p.size:
            raise ValidationError(f"{self.family.value} takes no parameters")

    @classmethod
    def identity(cls) -> "KernelSpec":
        return cls(KernelFamily.IDENTITY)

    @classmethod
    def additive_gaussian(cls, sigma: Any, tied: bool = False) -> "KernelSpec":
        return cls(KernelFamily.ADDITIVE_GAUSSIAN, tuple(np.atleast_1d(sigma)), tied=tied)

    @classmethod
    def quantization(cls, delta: float) -> "KernelSpec":
        return cls(KernelFamily.QUANTIZATION, (delta,))

    @property
    def has_pathwise(self) -> bool:
        return self.family is KernelFamily.ADDITIVE_GAUSSIAN

    def with_params(self, params: Any) -> "KernelSpec":
        return replace(self, params=tuple(np.atleast_1d(np.asarray(params, dtype=float))))

    def sigma(self, dim: int) -> np.ndarray:
        if self.family is not KernelFamily.ADDITIVE_GAUSSIAN:
            raise ValidationError(f"{self.family.value} has no sigma")
        s = np.asarray(self.params, dtype=float)
        if s.size == 1:
            return np.full(dim, s[0])
        if s.size != dim:
            raise ValidationError(f"Kernel has {s.size} sigmas for {dim}-dimensional points")
        return s

    def to_text(self) -> str:
        text = f"family={self.family.value}"
        name = _PARAM_NAMES[self.family]
        if name:
            text += f"; {name}=" + ",".join(f"{p:g}" for p in self.params)
        if self.tied:
            text += "; tied=true"
        return text

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Read ``family=additive_gaussian; sigma=4.899,0`` style text."""
        fields: dict[str, str] = {}
        for part in text.split(";"):
            if not part.strip():
                continue
            key, sep, value = part.partition("=")
            if not sep:
                raise ValidationError(f"Malformed kernel field '{part.strip()}'")
            fields[key.strip().lower()] = value.strip()
        try:
            family = KernelFamily(fields.pop("family", ""))
        except ValueError as e:
            raise ValidationError(f"Unknown kernel family in '{text}'") from e
        tied = fields.pop("tied", "false").lower() in ("1", "true", "yes")
        name = _PARAM_NAMES[family]
        params: tuple[float, ...] = ()
        if name and name in fields:
            try:
                params = tuple(float(v) for v in fields.pop(name).split(","))
            except ValueError as e:
                raise ValidationError(f"Non-numeric {name} in '{text}'") from e
        if fields:
            raise ValidationError(f"Unknown kernel fields: {', '.join(sorted(fields))}")
        return cls(family, params, tied=tied)


def quantize(x: np.ndarray, delta: float) -> np.ndarray:
    return delta * np.floor(x / delta) + delta / 2.0


def apply_kernel(k: KernelSpec, x: Any, rng: RngStream) -> Any:
    """Empirical pushforward: one kernel draw per input point.

    The kernel sees only the points, never any label or experiment parameter.
    """
    if k.family is KernelFamily.HLA_DEGRADE:
        from lecam.core.hla import degrade

        return [degrade(d) for d in x]
    x = as_samples(x, "kernel input")
    if k.family is KernelFamily.IDENTITY:
        return x.copy()
    if k.family is KernelFamily.QUANTIZATION:
        return quantize(x, k.params[0])
    eps = rng.generator().standard_normal(x.shape)
    return pathwise_apply(k, x, eps)


def pathwise_apply(k: KernelSpec, x: Any, eps: Any) -> np.ndarray:
    """Reparameterized additive-Gaussian pushforward ``x + sigma * eps``."""
    if not k.has_pathwise:
        raise ValidationError(f"{k.family.value} has no pathwise form; use finite differences")
    x = as_samples(x, "kernel input")
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 1 and x.shape[1] == 1:
        eps = eps[:, None]
    if eps.shape != x.shape:
        raise ValidationError(f"Noise shape {eps.shape} does not match input shape {x.shape}")
    return x + k.sigma(x.shape[1]) * eps
