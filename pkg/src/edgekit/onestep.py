"""One-step latent denoising algebra.

Timesteps are 1-indexed: ``t`` runs over ``1..T``.  A noise predictor is any
callable ``(z, t, c, guidance) -> eps_hat`` returning an array shaped like ``z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError
from .imagecore import LatentTensor, SemanticVector, correlate, require_same_shape


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).ravel()
        b = np.array(self.beta, dtype=np.float64).ravel()
        if a.size < 1 or a.shape != b.shape:
            raise DomainError(f"alpha/beta must be equal-length non-empty, got {a.size}/{b.size}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError("schedule entries must be finite")
        if np.any(a <= 0):
            raise DomainError("every alpha_t must be positive")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def T(self) -> int:
        return self.alpha.size

    def at(self, t: int) -> tuple[float, float]:
        if int(t) != t or not 1 <= t <= self.T:
            raise DomainError(f"timestep {t} outside 1..{self.T}")
        return float(self.alpha[t - 1]), float(self.beta[t - 1])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiffusionSchedule":
        try:
            return cls(doc["alpha"], doc["beta"])
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed schedule document: {exc}") from exc

    @classmethod
    def load(cls, path) -> "DiffusionSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


class NoisePredictor(Protocol):
    def __call__(
        self,
        z: LatentTensor,
        t: int,
        c: SemanticVector,
        guidance: Optional[LatentTensor] = None,
    ) -> LatentTensor | np.ndarray: ...


def build_vp_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Variance-preserving schedule from a linear per-step variance ramp.

    ``alpha_t = sqrt(prod_{s<=t} (1 - b_s))`` and ``beta_t = sqrt(1 - alpha_t**2)``.
    """
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise DomainError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    steps = np.linspace(beta_start, beta_end, int(T))
    alpha_bar = np.cumprod(1.0 - steps)
    return DiffusionSchedule(np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar))


def forward_diffuse(z: LatentTensor, t: int, eps: LatentTensor, s: DiffusionSchedule) -> LatentTensor:
    require_same_shape(z, eps, "latent and noise")
    a, b = s.at(t)
    return LatentTensor(a * np.asarray(z) + b * np.asarray(eps))


def denoise_step(z_t: LatentTensor, eps_hat: LatentTensor, t: int, s: DiffusionSchedule) -> LatentTensor:
    """Clean-latent estimate ``(z_t - beta_t * eps_hat) / alpha_t``."""
    require_same_shape(z_t, eps_hat, "latent and predicted noise")
    a, b = s.at(t)
    return LatentTensor((np.asarray(z_t) - b * np.asarray(eps_hat)) / a)


def one_step_sr(
    z_l: LatentTensor,
    predictor: NoisePredictor | Callable,
    c: SemanticVector,
    s: DiffusionSchedule,
    guidance: Optional[LatentTensor] = None,
) -> LatentTensor:
    """Map an LQ latent to an HQ latent with one denoising step at ``t = T``.

    No noise is added; the predictor sees ``z_l`` directly.
    """
    eps_hat = predictor(z_l, s.T, c, guidance)
    eps = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != z_l.shape:
        raise ContractError(f"noise predictor returned shape {eps.shape}, expected {z_l.shape}")
    if not np.all(np.isfinite(eps)):
        raise ContractError("noise predictor returned non-finite values")
    return denoise_step(z_l, LatentTensor(eps), s.T, s)


def zero_predictor(z, t, c, guidance=None) -> np.ndarray:
    return np.zeros(np.shape(z))


@dataclass(frozen=True, eq=False)
class ConvNoisePredictor:
    """Toy predictor: one fixed odd-sized kernel applied to every channel.

    Optional guidance features are added with weight ``guidance_scale``.
    Stateless, so safe to call concurrently.
    """

    kernel: np.ndarray = field(repr=False)
    bias: float = 0.0
    guidance_scale: float = 0.0

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ConfigurationError(f"kernel must be 2-D with odd sides, got {k.shape}")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    def __call__(self, z, t, c, guidance=None) -> np.ndarray:
        z = np.asarray(z)
        out = np.stack([correlate(ch, self.kernel) for ch in z]) + self.bias
        if guidance is not None and self.guidance_scale:
            require_same_shape(z, guidance, "latent and guidance")
            out = out + self.guidance_scale * np.asarray(guidance)
        return out

    @classmethod
    def load(cls, path) -> "ConvNoisePredictor":
        doc = json.loads(Path(path).read_text())
        return cls(doc["kernel"], doc.get("bias", 0.0), doc.get("guidance_scale", 0.0))
