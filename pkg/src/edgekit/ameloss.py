"""Adaptive multi-detector edge (AME) loss with entropy-derived weights.

A batch of N samples yields an N x M loss matrix (one column per detector
and loss kind).  Columns are min-max normalized, each column's Shannon
entropy (normalized by ln N) measures how little it discriminates between
samples, and weights are proportional to ``1 - entropy``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .detectors import ALL_DETECTORS, DetectorId, EdgeConfig, detect
from .edgemetrics import SsimParams, l1_loss, ssim_loss
from .errors import BatchTooSmallError, ConfigurationError, DomainError, ShapeError
from .imagecore import GrayImage, require_same_shape

LOSS_KINDS = ("l1", "ssim")


def column_labels(detectors: Iterable) -> tuple[str, ...]:
    """Labels ``<detector>.<kind>``, L1 before SSIM for each detector."""
    return tuple(f"{DetectorId.parse(d).value}.{kind}" for d in detectors for kind in LOSS_KINDS)


@dataclass(frozen=True, eq=False)
class LossMatrix:
    values: np.ndarray = field(repr=False)
    labels: tuple[str, ...]

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"loss matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise BatchTooSmallError(f"need at least 2 samples, got {arr.shape[0]}")
        labels = tuple(self.labels)
        if len(labels) != arr.shape[1]:
            raise ShapeError(f"{len(labels)} labels for {arr.shape[1]} columns")
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate column labels in {labels}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("loss matrix entries must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class EntropyReport:
    normalized: np.ndarray = field(repr=False)
    proportions: np.ndarray = field(repr=False)
    entropies: np.ndarray
    constant: np.ndarray
    labels: tuple[str, ...]
    n_samples: int


@dataclass(frozen=True, eq=False)
class WeightVector:
    labels: tuple[str, ...]
    weights: np.ndarray
    entropies: Optional[np.ndarray] = None
    fallback: bool = False
    n_samples: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (len(self.labels),):
            raise ShapeError(f"{w.size} weights for {len(self.labels)} labels")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must lie on the probability simplex, got {w}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.entropies is not None:
            object.__setattr__(self, "entropies", np.array(self.entropies, dtype=np.float64))

    def as_dict(self) -> dict:
        ent = self.entropies if self.entropies is not None else np.full(len(self.labels), np.nan)
        return {
            "labels": list(self.labels),
            "weights": [float(v) for v in self.weights],
            "entropies": [float(v) for v in ent],
            "fallback": bool(self.fallback),
            "n_samples": int(self.n_samples),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightVector":
        try:
            return cls(
                labels=tuple(doc["labels"]),
                weights=doc["weights"],
                entropies=doc.get("entropies"),
                fallback=bool(doc.get("fallback", False)),
                n_samples=int(doc.get("n_samples", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed weights document: {exc}") from exc

    @classmethod
    def load(cls, path) -> "WeightVector":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: weights file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: weights file must hold a JSON object")
        return cls.from_dict(doc)


@dataclass(frozen=True)
class HybridWeights:
    lambda_l2: float = 1.0
    lambda_perceptual: float = 1.0
    lambda_ame: float = 1.0

    def __post_init__(self):
        lams = (self.lambda_l2, self.lambda_perceptual, self.lambda_ame)
        if any(not math.isfinite(v) or v < 0 for v in lams):
            raise ConfigurationError(f"hybrid loss weights must be finite and >= 0, got {lams}")
        if not any(v > 0 for v in lams):
            raise ConfigurationError("at least one hybrid loss weight must be positive")


@dataclass(frozen=True)
class ImagePair:
    """An SR output and its ground truth, with optional precomputed HED maps."""

    sr: GrayImage
    gt: GrayImage
    hed_sr: object = None
    hed_gt: object = None


# -- loss matrix -----------------------------------------------------------


def pair_losses(
    pair: ImagePair,
    detectors: Sequence = ALL_DETECTORS,
    config: EdgeConfig | None = None,
    ssim_params: SsimParams | None = None,
) -> np.ndarray:
    """One loss-matrix row: per detector, L1 then SSIM loss of the edge maps."""
    config = config or EdgeConfig()
    require_same_shape(pair.sr, pair.gt, "SR and GT")
    row = []
    for d in detectors:
        d = DetectorId.parse(d)
        if d is DetectorId.HED:
            if pair.hed_sr is None or pair.hed_gt is None:
                raise ConfigurationError("HED detector requested but the pair lacks HED maps")
            e_gt = detect(d, pair.gt, config.with_hed(pair.hed_gt))
            e_sr = detect(d, pair.sr, config.with_hed(pair.hed_sr))
        else:
            e_gt = detect(d, pair.gt, config)
            e_sr = detect(d, pair.sr, config)
        row.append(l1_loss(e_gt, e_sr))
        row.append(ssim_loss(e_gt, e_sr, ssim_params))
    return np.asarray(row)


def build_loss_matrix(
    pairs: Sequence[ImagePair],
    detectors: Sequence = ALL_DETECTORS,
    config: EdgeConfig | None = None,
    ssim_params: SsimParams | None = None,
    jobs: int = 1,
) -> LossMatrix:
    detectors = [DetectorId.parse(d) for d in detectors]
    if not detectors:
        raise ConfigurationError("detector set is empty")
    if len(pairs) < 2:
        raise BatchTooSmallError(f"need at least 2 pairs, got {len(pairs)}")

    def row(pair):
        return pair_losses(pair, detectors, config, ssim_params)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, pairs))
    else:
        rows = [row(p) for p in pairs]
    return LossMatrix(np.vstack(rows), column_labels(detectors))


# -- entropy weighting -----------------------------------------------------


def minmax_normalize(x: LossMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-column min-max scaling; constant columns are flagged and set to NaN."""
    v = x.values
    lo = v.min(axis=0)
    span = v.max(axis=0) - lo
    constant = span == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (v - lo) / span
    r[:, constant] = np.nan
    return r, constant


def entropy(r: np.ndarray, constant: np.ndarray, n: int, labels: Sequence[str] = ()) -> EntropyReport:
    """Column entropies of the normalized matrix, scaled into [0, 1] by ln N.

    Constant columns, and columns whose normalized sum is zero, get entropy 1.
    """
    if n < 2:
        raise BatchTooSmallError(f"entropy needs N >= 2, got {n}")
    r = np.asarray(r, dtype=np.float64)
    constant = np.asarray(constant, dtype=bool).copy()
    totals = np.where(constant, 0.0, np.nansum(r, axis=0))
    constant |= totals <= 0
    safe = np.where(constant, 1.0, totals)
    p = np.where(constant, np.nan, r / safe)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    e = -plogp.sum(axis=0) / math.log(n)
    e = np.where(constant, 1.0, np.clip(e, 0.0, 1.0))
    labels = tuple(labels) or tuple(str(j) for j in range(r.shape[1]))
    return EntropyReport(r, p, e, constant, labels, n)


def entropy_weights(report: EntropyReport) -> WeightVector:
    """Weights proportional to ``1 - e_j``; uniform if no column is informative."""
    d = 1.0 - report.entropies
    total = d.sum()
    m = d.size
    if total <= 0:
        return WeightVector(report.labels, np.full(m, 1.0 / m), report.entropies, True, report.n_samples)
    return WeightVector(report.labels, d / total, report.entropies, False, report.n_samples)


def compute_weights(x: LossMatrix) -> tuple[EntropyReport, WeightVector]:
    r, constant = minmax_normalize(x)
    report = entropy(r, constant, x.n_samples, x.labels)
    return report, entropy_weights(report)


# -- aggregation -----------------------------------------------------------


def ame_loss(row, weights: WeightVector, labels: Sequence[str] | None = None) -> float:
    """Entropy-weighted sum of one sample's loss items."""
    row = np.asarray(row, dtype=np.float64)
    if labels is not None and tuple(labels) != weights.labels:
        raise ConfigurationError(f"loss labels {tuple(labels)} do not match weight labels {weights.labels}")
    if row.shape != weights.weights.shape:
        raise ConfigurationError(f"{row.size} loss items for {weights.weights.size} weights")
    return float(row @ weights.weights)


def batch_ame(x: LossMatrix, weights: WeightVector) -> tuple[np.ndarray, float]:
    """Per-sample AME and their mean."""
    per_sample = np.array([ame_loss(row, weights, x.labels) for row in x.values])
    return per_sample, float(per_sample.mean())


def hybrid_loss(l2: float, perceptual: float, ame: float, w: HybridWeights | None = None) -> float:
    w = w or HybridWeights()
    terms = (l2, perceptual, ame)
    if any(not math.isfinite(t) or t < 0 for t in terms):
        raise DomainError(f"hybrid loss terms must be finite and >= 0, got {terms}")
    return w.lambda_l2 * l2 + w.lambda_perceptual * perceptual + w.lambda_ame * ame
