"""Report figures written next to the JSON/CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIG_DPI = 120


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no timestamp metadata, so reruns produce the same bytes
    fig.savefig(path, dpi=FIG_DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_weights(labels, weights, entropies=None, path="weights.png", title="Entropy weights"):
    """Bar chart of loss-item weights, with entropies on a twin axis if given."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    xs = range(len(labels))
    ax.bar(xs, weights, color="tab:blue", label="weight")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("weight")
    ax.set_title(title)
    if entropies is not None:
        twin = ax.twinx()
        twin.plot(list(xs), entropies, "o--", color="tab:orange", label="entropy")
        twin.set_ylim(0, 1.05)
        twin.set_ylabel("entropy")
    return save_figure(fig, path)


def plot_pairs(report: dict, path="per_pair.png"):
    """PSNR/SSIM and AME per evaluated pair."""
    pairs = report["pairs"]
    idx = [p["index"] for p in pairs]
    psnr = [float(p["psnr"]) if p["psnr"] != "inf" else float("nan") for p in pairs]
    fig, (left, right) = plt.subplots(1, 2, figsize=(8, 3.2))
    left.plot(idx, psnr, "o-", label="PSNR (dB)")
    left.set_xlabel("pair")
    left.set_ylabel("PSNR (dB)")
    ssim_ax = left.twinx()
    ssim_ax.plot(idx, [p["ssim"] for p in pairs], "s--", color="tab:green")
    ssim_ax.set_ylabel("SSIM")
    right.bar(idx, [p["ame"] for p in pairs], color="tab:red")
    right.set_xlabel("pair")
    right.set_ylabel("AME loss")
    return save_figure(fig, path)
