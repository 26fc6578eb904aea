"""Batch configuration, manifest loading and report assembly used by the CLI."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import __version__
from .ameloss import (
    HybridWeights,
    ImagePair,
    LossMatrix,
    WeightVector,
    column_labels,
    compute_weights,
    hybrid_loss,
    pair_losses,
)
from .detectors import ALL_DETECTORS, CannyParams, DetectorId, EdgeConfig, detect
from .edgemetrics import SsimParams, l2_loss, psnr, ssim
from .errors import BatchTooSmallError, ConfigurationError, EdgeKitError, ShapeError
from .imagecore import load_image, require_same_shape, resize_bicubic, save_image

log = logging.getLogger(__name__)

MODES = ("per-batch", "frozen")
EDGE_SOURCES = ("upsampled", "raw")
PSNR_INF_TOKEN = "inf"


@dataclass(frozen=True)
class RunConfig:
    manifest: Optional[str] = None
    detectors: tuple = tuple(d.value for d in ALL_DETECTORS)
    detectors_explicit: bool = False
    canny: CannyParams = field(default_factory=CannyParams)
    log_sigma: float = 1.4
    ssim: SsimParams = field(default_factory=SsimParams)
    hybrid: HybridWeights = field(default_factory=HybridWeights)
    mode: str = "per-batch"
    hed_manifest: Optional[str] = None
    out: str = "edgekit-out"
    jobs: int = 1
    figures: bool = True
    lq_scale: int = 4
    edge_source: str = "upsampled"

    def __post_init__(self):
        dets = tuple(DetectorId.parse(d).value for d in self.detectors)
        if not dets:
            raise ConfigurationError("detector set must not be empty")
        if len(set(dets)) != len(dets):
            raise ConfigurationError(f"duplicate detectors in {dets}")
        object.__setattr__(self, "detectors", dets)
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.jobs) != self.jobs or self.jobs < 1:
            raise ConfigurationError(f"jobs must be a positive integer, got {self.jobs}")
        if int(self.lq_scale) != self.lq_scale or self.lq_scale < 1:
            raise ConfigurationError(f"lq_scale must be a positive integer, got {self.lq_scale}")
        if self.edge_source not in EDGE_SOURCES:
            raise ConfigurationError(f"edge_source must be one of {EDGE_SOURCES}, got {self.edge_source!r}")

    @property
    def edge_config(self) -> EdgeConfig:
        return EdgeConfig(canny=self.canny, log_sigma=self.log_sigma)

    def echo(self) -> dict:
        """Effective parameters with defaults filled in.

        Output location and parallelism are left out: they do not change results.
        """
        return {
            "manifest": self.manifest,
            "detectors": list(self.detectors),
            "canny": asdict(self.canny),
            "log_sigma": self.log_sigma,
            "ssim": asdict(self.ssim),
            "hybrid": asdict(self.hybrid),
            "mode": self.mode,
            "hed_manifest": self.hed_manifest,
            "lq_scale": self.lq_scale,
            "edge_source": self.edge_source,
        }

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        base = path.parent
        for key in ("manifest", "hed_manifest"):
            if doc.get(key):
                doc[key] = str(base / doc[key])
        return cls.from_dict(doc, **overrides)

    @classmethod
    def from_dict(cls, doc: dict, **overrides) -> "RunConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "canny" in doc:
                doc["canny"] = CannyParams(**doc["canny"])
            if "ssim" in doc:
                doc["ssim"] = SsimParams(**doc["ssim"])
            if "hybrid" in doc:
                doc["hybrid"] = HybridWeights(**doc["hybrid"])
        except TypeError as exc:
            raise ConfigurationError(f"bad config section: {exc}") from exc
        if "detectors" in doc:
            doc["detectors"] = tuple(doc["detectors"])
            doc.setdefault("detectors_explicit", True)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)


@dataclass(frozen=True)
class PairRecord:
    sr: str
    gt: str
    hed_sr: Optional[str] = None
    hed_gt: Optional[str] = None
    scores: dict = field(default_factory=dict)
    base: str = "."

    def resolve(self, rel: Optional[str]) -> Optional[Path]:
        return None if rel is None else Path(self.base) / rel

    @property
    def has_hed(self) -> bool:
        return self.hed_sr is not None and self.hed_gt is not None


# -- manifests -------------------------------------------------------------


def _stems(directory: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in (".png", ".pgm")
    }


def _pairs_from_directory(root: Path) -> list[PairRecord]:
    sr_dir, gt_dir = root / "sr", root / "gt"
    if not (sr_dir.is_dir() and gt_dir.is_dir()):
        raise ConfigurationError(f"{root}: directory manifests need 'sr/' and 'gt/' subdirectories")
    sr, gt = _stems(sr_dir), _stems(gt_dir)
    missing = sorted(set(sr) ^ set(gt))
    if missing:
        raise ConfigurationError(f"{root}: unpaired stems {missing}")
    hed_sr = _stems(root / "hed_sr") if (root / "hed_sr").is_dir() else {}
    hed_gt = _stems(root / "hed_gt") if (root / "hed_gt").is_dir() else {}
    out = []
    for stem in sorted(sr):
        rel = lambda p: str(p.relative_to(root)) if p is not None else None  # noqa: E731
        out.append(
            PairRecord(
                sr=rel(sr[stem]),
                gt=rel(gt[stem]),
                hed_sr=rel(hed_sr.get(stem)),
                hed_gt=rel(hed_gt.get(stem)),
                base=str(root),
            )
        )
    return out


def load_pair_manifest(path, hed_manifest=None) -> list[PairRecord]:
    """Read ``[{sr, gt, hed_sr?, hed_gt?, scores?}, ...]`` or an ``sr/``+``gt/`` directory."""
    path = Path(path)
    if path.is_dir():
        records = _pairs_from_directory(path)
    else:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: manifest is not valid JSON: {exc}") from exc
        if not isinstance(doc, list):
            raise ConfigurationError(f"{path}: manifest must be a JSON array of pair records")
        records = []
        for i, item in enumerate(doc):
            if not isinstance(item, dict) or "sr" not in item or "gt" not in item:
                raise ConfigurationError(f"{path}: record {i} needs 'sr' and 'gt'")
            records.append(
                PairRecord(
                    sr=item["sr"],
                    gt=item["gt"],
                    hed_sr=item.get("hed_sr"),
                    hed_gt=item.get("hed_gt"),
                    scores=dict(item.get("scores", {})),
                    base=str(path.parent),
                )
            )
    if hed_manifest:
        records = _apply_hed_manifest(records, hed_manifest)
    return records


def load_hed_manifest(path) -> dict[Path, Path]:
    """Read ``{image_path: hed_map_path}``; both sides relative to the file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: HED manifest must map image paths to HED map paths")
    return {(path.parent / k).resolve(): (path.parent / v).resolve() for k, v in doc.items()}


def _apply_hed_manifest(records, hed_manifest) -> list[PairRecord]:
    mapping = load_hed_manifest(hed_manifest)
    out = []
    for rec in records:
        hed_sr = rec.hed_sr or _lookup(mapping, rec.resolve(rec.sr), rec.base)
        hed_gt = rec.hed_gt or _lookup(mapping, rec.resolve(rec.gt), rec.base)
        out.append(replace(rec, hed_sr=hed_sr, hed_gt=hed_gt))
    return out


def _lookup(mapping, image: Path, base) -> Optional[str]:
    hit = mapping.get(image.resolve())
    return None if hit is None else os.path.relpath(hit, Path(base).resolve())


class ImageItem(NamedTuple):
    image: str
    hed: Optional[str]
    base: str
    lq: bool = False


def load_image_manifest(path, hed_manifest=None) -> list[ImageItem]:
    """Images for edge extraction.

    Accepts plain path strings, ``{image, hed?}`` records, ``{lq, hed?}``
    records for low-resolution inputs, pair records (both sides are
    processed) or a pair directory.
    """
    path = Path(path)
    if path.is_dir():
        pairs = load_pair_manifest(path, hed_manifest)
        return _expand_pairs(pairs)
    doc = json.loads(path.read_text())
    if not isinstance(doc, list):
        raise ConfigurationError(f"{path}: manifest must be a JSON array")
    items = []
    base = str(path.parent)
    for i, item in enumerate(doc):
        if isinstance(item, str):
            items.append(ImageItem(item, None, base))
        elif isinstance(item, dict) and "image" in item:
            items.append(ImageItem(item["image"], item.get("hed"), base))
        elif isinstance(item, dict) and "lq" in item:
            items.append(ImageItem(item["lq"], item.get("hed"), base, lq=True))
        elif isinstance(item, dict) and "sr" in item and "gt" in item:
            rec = PairRecord(item["sr"], item["gt"], item.get("hed_sr"), item.get("hed_gt"), base=base)
            items.extend(_expand_pairs([rec]))
        else:
            raise ConfigurationError(f"{path}: record {i} is neither a path, image record nor pair")
    if hed_manifest:
        mapping = load_hed_manifest(hed_manifest)
        items = [it._replace(hed=it.hed or _lookup(mapping, Path(it.base) / it.image, it.base)) for it in items]
    return items


def _expand_pairs(pairs) -> list:
    items = []
    for rec in pairs:
        items.append(ImageItem(rec.sr, rec.hed_sr, rec.base))
        items.append(ImageItem(rec.gt, rec.hed_gt, rec.base))
    return items


# -- detector set resolution ----------------------------------------------


def effective_detectors(cfg: RunConfig, has_hed: bool) -> tuple[str, ...]:
    """Drop HED (with a warning) from the default set when maps are missing."""
    if DetectorId.HED.value not in cfg.detectors or has_hed:
        return cfg.detectors
    if cfg.detectors_explicit:
        raise ConfigurationError("HED detector selected but no HED maps were provided")
    log.warning("no HED maps provided; dropping the HED detector from the bank")
    return tuple(d for d in cfg.detectors if d != DetectorId.HED.value)


# -- per-item work ---------------------------------------------------------


def _map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _catching(fn):
    def run(item):
        try:
            return fn(item), None
        except (OSError, EdgeKitError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    return run


def load_pair(rec: PairRecord, with_hed: bool) -> ImagePair:
    sr = load_image(rec.resolve(rec.sr))
    gt = load_image(rec.resolve(rec.gt))
    require_same_shape(sr, gt, f"SR {rec.sr} and GT {rec.gt}")
    if with_hed:
        return ImagePair(sr, gt, rec.resolve(rec.hed_sr), rec.resolve(rec.hed_gt))
    return ImagePair(sr, gt)


def run_detect(cfg: RunConfig) -> tuple[dict, int]:
    """Write one edge map per (image, detector) and return ``(index, exit_code)``."""
    items = load_image_manifest(cfg.manifest, cfg.hed_manifest)
    has_hed = bool(items) and all(it.hed is not None for it in items)
    detectors = effective_detectors(cfg, has_hed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seen: dict[Path, str] = {}
    plan = []
    for item in items:
        target = _edge_map_stem(out, item.image)
        clash = None
        if target in seen and seen[target] != item.image:
            clash = f"output name {target.name!r} already used by {seen[target]}"
        else:
            seen[target] = item.image
        plan.append((item, target, clash))
    config = cfg.edge_config
    upsample = cfg.edge_source == "upsampled" and cfg.lq_scale > 1

    def work(entry):
        item, target, clash = entry
        if clash:
            raise ConfigurationError(clash)
        image = item.image
        img = load_image(Path(item.base) / image)
        if item.lq and upsample:
            # bring LQ inputs to HQ scale before edge extraction
            img = resize_bicubic(img, img.width * cfg.lq_scale, img.height * cfg.lq_scale)
        ec = config.with_hed(Path(item.base) / item.hed if item.hed else None)
        target.parent.mkdir(parents=True, exist_ok=True)
        written = []
        for d in detectors:
            path = target.with_name(f"{target.name}.{d}.pgm")
            save_image(detect(d, img, ec), path)
            written.append({"image": image, "detector": d, "path": path.relative_to(out).as_posix()})
        return written

    results = _map(_catching(work), plan, cfg.jobs)
    outputs, failures = [], []
    for (item, *_), (written, err) in zip(plan, results):
        if err is None:
            outputs.extend(written)
        else:
            failures.append({"image": item.image, "error": err})
    index = {
        "detectors": list(detectors),
        "outputs": outputs,
        "failures": failures,
        "provenance": provenance(cfg),
    }
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return index, 0 if not failures else 1


def _edge_map_stem(out: Path, image: str) -> Path:
    """``<out>/<relative dir>/<stem>``; the image's directory is kept when it is relative."""
    rel = Path(image)
    if rel.is_absolute() or ".." in rel.parts:
        return out / rel.stem
    return out / rel.parent / rel.stem


def _prepare_pairs(cfg: RunConfig) -> tuple[list[PairRecord], tuple[str, ...]]:
    records = load_pair_manifest(cfg.manifest, cfg.hed_manifest)
    has_hed = bool(records) and all(r.has_hed for r in records)
    return records, effective_detectors(cfg, has_hed)


def run_weights(cfg: RunConfig) -> tuple[WeightVector, dict]:
    """Dataset-level weights over every pair in the manifest."""
    records, detectors = _prepare_pairs(cfg)
    if len(records) < 2:
        raise BatchTooSmallError(f"need at least 2 pairs, manifest lists {len(records)}")
    with_hed = DetectorId.HED.value in detectors
    config = cfg.edge_config

    def row(rec):
        try:
            return pair_losses(load_pair(rec, with_hed), detectors, config, cfg.ssim)
        except (OSError, EdgeKitError) as exc:
            raise type(exc)(f"pair {rec.sr} / {rec.gt}: {exc}") from exc

    x = LossMatrix(np.vstack(_map(row, records, cfg.jobs)), column_labels(detectors))
    report, weights = compute_weights(x)
    entropy_doc = {
        "labels": list(x.labels),
        "loss_matrix": x.values.tolist(),
        "normalized": _nan_to_none(report.normalized),
        "proportions": _nan_to_none(report.proportions),
        "entropies": report.entropies.tolist(),
        "constant_columns": report.constant.tolist(),
        "n_samples": x.n_samples,
    }
    return weights, entropy_doc


def _nan_to_none(arr) -> list:
    return [[None if np.isnan(v) else float(v) for v in row] for row in np.asarray(arr)]


def _metric(v: float):
    return PSNR_INF_TOKEN if v == float("inf") else v


def run_evaluate(cfg: RunConfig, weights_path=None) -> tuple[dict, int]:
    """Full-reference metrics, edge losses and AME for every manifest pair."""
    records, detectors = _prepare_pairs(cfg)
    labels = column_labels(detectors)
    frozen = None
    if cfg.mode == "frozen":
        if weights_path is None:
            raise ConfigurationError("frozen mode needs a weights file")
        frozen = WeightVector.load(weights_path)
        if frozen.labels != labels:
            raise ConfigurationError(
                f"weights file labels {list(frozen.labels)} do not match detectors {list(labels)}"
            )
    with_hed = DetectorId.HED.value in detectors
    config = cfg.edge_config

    def work(rec):
        pair = load_pair(rec, with_hed)
        return {
            "psnr": psnr(pair.sr, pair.gt),
            "ssim": ssim(pair.sr, pair.gt, cfg.ssim),
            "l2": l2_loss(pair.sr, pair.gt),
            "row": pair_losses(pair, detectors, config, cfg.ssim),
        }

    results = _map(_catching(work), records, cfg.jobs)
    ok = [(i, rec, res) for i, (rec, (res, err)) in enumerate(zip(records, results)) if err is None]
    failures = [
        {"index": i, "sr": rec.sr, "gt": rec.gt, "error": err}
        for i, (rec, (_, err)) in enumerate(zip(records, results))
        if err is not None
    ]

    if frozen is not None:
        weights, entropy_info = frozen, None
        if not ok:
            raise BatchTooSmallError("no pair could be evaluated")
    else:
        if len(ok) < 2:
            raise BatchTooSmallError(f"per-batch weights need at least 2 evaluated pairs, got {len(ok)}")
        x = LossMatrix(np.vstack([res["row"] for _, _, res in ok]), labels)
        entropy_info, weights = compute_weights(x)

    pairs = []
    for i, rec, res in ok:
        row = res["row"]
        ame = float(row @ weights.weights)
        perceptual = rec.scores.get("lpips")
        pairs.append(
            {
                "index": i,
                "sr": rec.sr,
                "gt": rec.gt,
                "psnr": _metric(res["psnr"]),
                "ssim": res["ssim"],
                "l2": res["l2"],
                "edge_losses": dict(zip(labels, row.tolist())),
                "ame_components": dict(zip(labels, (row * weights.weights).tolist())),
                "ame": ame,
                "perceptual": perceptual,
                "hybrid": hybrid_loss(res["l2"], perceptual or 0.0, ame, cfg.hybrid),
                "external_scores": {k: rec.scores[k] for k in sorted(rec.scores)},
            }
        )

    psnrs = [res["psnr"] for _, _, res in ok]
    batch = {
        "n_pairs": len(ok),
        "mode": cfg.mode,
        "weights_source": "frozen" if frozen is not None else "per-batch",
        "labels": list(labels),
        "weights": weights.weights.tolist(),
        "entropies": (
            entropy_info.entropies.tolist() if entropy_info is not None
            else [float(v) for v in weights.entropies] if weights.entropies is not None else None
        ),
        "constant_columns": entropy_info.constant.tolist() if entropy_info is not None else None,
        "fallback": bool(weights.fallback),
        "mean_ame": float(np.mean([p["ame"] for p in pairs])),
        "mean_psnr": _metric(float(np.mean(psnrs))),
        "mean_ssim": float(np.mean([p["ssim"] for p in pairs])),
        "mean_hybrid": float(np.mean([p["hybrid"] for p in pairs])),
    }
    report = {
        "pairs": pairs,
        "batch": batch,
        "failures": failures,
        "provenance": provenance(cfg),
    }
    return report, 0 if not failures else 1


def provenance(cfg: RunConfig) -> dict:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return {
        "tool": "edgekit",
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", stamp),
        "config": cfg.echo(),
    }


# -- serialization ---------------------------------------------------------


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def _flatten(record: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def report_csv(report: dict) -> str:
    """One row per pair; columns follow the JSON field order."""
    rows = [_flatten(p) for p in report["pairs"]]
    columns: list[str] = []
    for row in rows:
        columns.extend(c for c in row if c not in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else _csv_value(row.get(c)) for c in columns])
    return buf.getvalue()


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def check_report_schema(report: dict) -> None:
    """Raise ``ShapeError`` if ``report`` does not follow the evaluation schema."""
    for key in ("pairs", "batch", "failures", "provenance"):
        if key not in report:
            raise ShapeError(f"report lacks '{key}'")
    batch = report["batch"]
    labels = batch["labels"]
    weights = batch["weights"]
    if len(labels) != len(weights):
        raise ShapeError("weights and labels differ in length")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
        raise ShapeError("batch weights are not on the simplex")
    for pair in report["pairs"]:
        for key in ("psnr", "ssim", "ame", "l2", "hybrid"):
            v = pair[key]
            if v == PSNR_INF_TOKEN and key == "psnr":
                continue
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ShapeError(f"pair {pair['index']}: {key} = {v!r} is not finite")
        if list(pair["edge_losses"]) != labels or list(pair["ame_components"]) != labels:
            raise ShapeError(f"pair {pair['index']}: loss labels do not match batch labels")
