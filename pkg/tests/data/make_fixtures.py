"""Regenerate the committed test fixtures.

    python tests/data/make_fixtures.py

Golden values come from the loop oracles in ``tests/oracles.py``; the
library is used only to compose per-pair edge losses for the frozen
4-pair expectations.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import oracles  # noqa: E402

from edgekit.ameloss import ImagePair, pair_losses  # noqa: E402
from edgekit.detectors import ALL_DETECTORS, EdgeConfig  # noqa: E402
from edgekit.edgemetrics import l2_loss, psnr, ssim  # noqa: E402
from edgekit.gatedfusion import GateMlp  # noqa: E402
from edgekit.imagecore import GrayImage, LatentTensor, load_image, save_image, write_latent  # noqa: E402

SIZE = 48


def square_fixture():
    img = np.zeros((32, 32))
    img[10:22, 10:22] = 1.0
    save_image(GrayImage(img), HERE / "square32.pgm")
    golden = oracles.canny_staged(img)
    save_image(GrayImage(golden), HERE / "square32_canny_golden.pgm")


def _scene(kind: int) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(float)
    if kind == 0:
        img = 0.15 + 0.7 * (((xx - 24) ** 2 + (yy - 22) ** 2) < 13 ** 2)
    elif kind == 1:
        img = 0.2 + 0.5 * ((xx > 10) & (xx < 30) & (yy > 8) & (yy < 40)) + 0.25 * (yy > 30)
    elif kind == 2:
        img = 0.5 + 0.35 * np.sign(np.sin(xx / 3.0))
    else:
        img = 0.1 + 0.6 * xx / SIZE + 0.25 * (np.abs(xx - yy) < 4)
    return np.clip(img, 0, 1)


def _degrade(img: np.ndarray, blur: int, noise: float, rng) -> np.ndarray:
    out = oracles.conv_replicate(img, oracles.gauss_2d(blur)) if blur else img
    return np.clip(out + rng.normal(0, noise, img.shape), 0, 1)


def _soft_edges(img: np.ndarray) -> np.ndarray:
    sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    mag = np.hypot(oracles.conv_replicate(img, sx), oracles.conv_replicate(img, sx.T))
    soft = oracles.conv_replicate(mag, oracles.gauss_2d(5))
    return soft / soft.max() if soft.max() > 0 else soft


def synth4():
    root = HERE / "synth4"
    for sub in ("gt", "sr", "hed_gt", "hed_sr"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    settings = [(3, 0.01), (5, 0.03), (7, 0.02), (5, 0.06)]
    manifest = []
    for k, (blur, noise) in enumerate(settings):
        stem = f"pair{k}"
        gt = _scene(k)
        sr = _degrade(gt, blur, noise, rng)
        save_image(GrayImage(gt), root / "gt" / f"{stem}.pgm")
        save_image(GrayImage(sr), root / "sr" / f"{stem}.pgm")
        # HED stand-ins are computed from the quantized files, as a real network would see them
        gt_q = np.asarray(load_image(root / "gt" / f"{stem}.pgm"))
        sr_q = np.asarray(load_image(root / "sr" / f"{stem}.pgm"))
        save_image(GrayImage(_soft_edges(gt_q)), root / "hed_gt" / f"{stem}.png")
        save_image(GrayImage(_soft_edges(sr_q)), root / "hed_sr" / f"{stem}.png")
        manifest.append(
            {
                "sr": f"sr/{stem}.pgm",
                "gt": f"gt/{stem}.pgm",
                "hed_sr": f"hed_sr/{stem}.png",
                "hed_gt": f"hed_gt/{stem}.png",
            }
        )
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    # frozen expectations: library edge losses composed with the oracle weighting
    rows, metrics = [], []
    for rec in manifest:
        sr = load_image(root / rec["sr"])
        gt = load_image(root / rec["gt"])
        pair = ImagePair(sr, gt, root / rec["hed_sr"], root / rec["hed_gt"])
        rows.append(pair_losses(pair, ALL_DETECTORS, EdgeConfig()).tolist())
        metrics.append({"psnr": psnr(sr, gt), "ssim": ssim(sr, gt), "l2": l2_loss(sr, gt)})
    weights, ent, fallback = oracles.entropy_weights(rows)
    labels = [f"{d.value}.{kind}" for d in ALL_DETECTORS for kind in ("l1", "ssim")]
    expected = {
        "labels": labels,
        "loss_matrix": rows,
        "weights": weights,
        "entropies": ent,
        "fallback": fallback,
        "ame": [sum(w * v for w, v in zip(weights, row)) for row in rows],
        "metrics": metrics,
    }
    (root / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")


def gate_fixture():
    root = HERE / "gate"
    root.mkdir(exist_ok=True)
    mlp = GateMlp.random(16, (32, 16), seed=7)
    mlp.save(root / "mlp_random.json")
    GateMlp.zeros(16, (32, 16)).save(root / "mlp_zero.json")
    rng = np.random.default_rng(11)
    z = rng.normal(size=16)
    (root / "z_sem.json").write_text(json.dumps({"z_sem": z.tolist()}) + "\n")
    write_latent(LatentTensor(rng.normal(size=(4, 8, 8))), root / "f_c.eklt")
    write_latent(LatentTensor(rng.normal(size=(4, 8, 8))), root / "f_h.eklt")
    logits = oracles.mlp_logits(
        [(w.tolist(), b.tolist()) for w, b in mlp.layers], z.tolist()
    )
    beta_c = 1.0 / (1.0 + math.exp(logits[1] - logits[0]))
    (root / "expected.json").write_text(
        json.dumps({"logits": logits, "beta_c": beta_c, "beta_h": 1.0 - beta_c}, indent=2) + "\n"
    )


if __name__ == "__main__":
    square_fixture()
    synth4()
    gate_fixture()
    print("fixtures written to", HERE)
