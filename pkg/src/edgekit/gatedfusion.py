"""Semantic gate: a small MLP picks softmax weights that blend two feature streams."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .imagecore import LatentTensor, SemanticVector, require_same_shape

DEFAULT_HIDDEN = (128, 64)

# smallest gate weight we report; keeps both weights strictly inside (0, 1)
# while 1 - GATE_FLOOR is still exactly representable
GATE_FLOOR = 2.0 ** -53


@dataclass(frozen=True, eq=False)
class GateMlp:
    """Three dense layers ``d_sem -> h1 -> h2 -> 2`` with ReLU between them.

    Each layer is ``(w, b)`` with ``w`` shaped ``(fan_out, fan_in)``.
    """

    layers: tuple = field(repr=False)

    def __post_init__(self):
        if len(self.layers) != 3:
            raise ShapeError(f"gate MLP needs exactly 3 layers, got {len(self.layers)}")
        frozen = []
        fan_in = None
        for i, (w, b) in enumerate(self.layers):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not fit")
            if fan_in is not None and w.shape[1] != fan_in:
                raise ShapeError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {fan_in}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {i} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append((w, b))
            fan_in = w.shape[0]
        if fan_in != 2:
            raise ShapeError(f"gate MLP must output 2 logits, got {fan_in}")
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def dims(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @classmethod
    def zeros(cls, d_sem: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> "GateMlp":
        dims = [d_sem, *hidden, 2]
        return cls(tuple((np.zeros((o, i)), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])))

    @classmethod
    def random(cls, d_sem: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> "GateMlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        rng = np.random.default_rng(seed)
        dims = [d_sem, *hidden, 2]
        layers = []
        for i, o in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(i)
            layers.append((rng.uniform(-bound, bound, (o, i)), rng.uniform(-bound, bound, o)))
        return cls(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "layers": [{"w": w.ravel().tolist(), "b": b.tolist()} for w, b in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GateMlp":
        try:
            dims = [int(d) for d in doc["dims"]]
            specs = doc["layers"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed MLP weights document: {exc}") from exc
        if len(dims) != 4 or len(specs) != 3:
            raise ShapeError(f"expected dims [d_sem, h1, h2, 2] and 3 layers, got {dims}")
        layers = []
        for i, spec in enumerate(specs):
            w = np.asarray(spec["w"], dtype=np.float64)
            if w.size != dims[i + 1] * dims[i]:
                raise ShapeError(f"layer {i}: {w.size} weights, expected {dims[i + 1]}x{dims[i]}")
            layers.append((w.reshape(dims[i + 1], dims[i]), spec["b"]))
        return cls(tuple(layers))

    @classmethod
    def load(cls, path) -> "GateMlp":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


@dataclass(frozen=True)
class GateWeights:
    beta_c: float
    beta_h: float

    def __post_init__(self):
        if not (0.0 < self.beta_c < 1.0 and 0.0 < self.beta_h < 1.0):
            raise DomainError(f"gate weights must lie in (0, 1), got {self.beta_c}, {self.beta_h}")
        if abs(self.beta_c + self.beta_h - 1.0) > 1e-12:
            raise DomainError("gate weights must sum to 1")


def mlp_forward(m: GateMlp, z_sem: SemanticVector) -> np.ndarray:
    """Two gate logits for the Canny and HED streams."""
    x = np.asarray(z_sem, dtype=np.float64)
    if x.shape != (m.dims[0],):
        raise ShapeError(f"semantic vector has dim {x.size}, MLP expects {m.dims[0]}")
    (w1, b1), (w2, b2), (w3, b3) = m.layers
    h = np.maximum(w1 @ x + b1, 0.0)
    h = np.maximum(w2 @ h + b2, 0.0)
    return w3 @ h + b3


def softmax_gate(logits) -> GateWeights:
    """Stable two-way softmax.

    The smaller weight is floored at 2**-53 so both stay strictly inside
    (0, 1) even for saturated logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (2,):
        raise ShapeError(f"expected 2 logits, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise DomainError(f"gate logits must be finite, got {logits}")
    lc, lh = logits
    gap = -abs(lc - lh)
    small = math.exp(gap) / (1.0 + math.exp(gap))
    small = min(max(small, GATE_FLOOR), 0.5)
    large = 1.0 - small
    return GateWeights(large, small) if lc >= lh else GateWeights(small, large)


def fuse(f_c: LatentTensor, f_h: LatentTensor, g: GateWeights) -> LatentTensor:
    """Convex blend ``beta_c * f_c + beta_h * f_h``."""
    require_same_shape(f_c, f_h, "feature tensors")
    a = np.asarray(f_c)
    b = np.asarray(f_h)
    out = g.beta_c * a + g.beta_h * b
    # rounding can push a convex combination one ulp past its endpoints
    return LatentTensor(np.clip(out, np.minimum(a, b), np.maximum(a, b)))


def gate_pipeline(
    m: GateMlp, z_sem: SemanticVector, f_c: LatentTensor, f_h: LatentTensor
) -> tuple[GateWeights, LatentTensor]:
    require_same_shape(f_c, f_h, "feature tensors")
    g = softmax_gate(mlp_forward(m, z_sem))
    return g, fuse(f_c, f_h, g)


def load_semantic_vector(path) -> SemanticVector:
    """Read ``[...]`` or ``{"z_sem": [...]}`` JSON."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        if "z_sem" not in doc:
            raise ConfigurationError(f"{path}: expected a 'z_sem' array")
        doc = doc["z_sem"]
    return SemanticVector(np.asarray(doc, dtype=np.float64))
