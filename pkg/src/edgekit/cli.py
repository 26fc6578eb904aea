"""Command-line front-end: ``edgekit detect | weights | evaluate | fuse-demo``.

Exit codes: 0 on success, 1 when some items failed (they are listed in the
report), 2 on configuration, shape or IO errors that stop the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import EdgeKitError
from .gatedfusion import GateMlp, gate_pipeline, load_semantic_vector
from .imagecore import read_latent, write_latent
from .pipeline import (
    RunConfig,
    dumps_report,
    report_csv,
    run_detect,
    run_evaluate,
    run_weights,
)

log = logging.getLogger("edgekit")


def _color(text: str, code: str, stream=sys.stderr) -> str:
    if os.environ.get("EDGEKIT_NO_COLOR") or not getattr(stream, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def _status(ok: bool, message: str) -> None:
    tag = _color("ok", "32") if ok else _color("FAIL", "31")
    print(f"[{tag}] {message}", file=sys.stderr)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--manifest", help="pair/image manifest (JSON file or sr/gt directory)")
    p.add_argument("--hed-manifest", help="JSON mapping image paths to HED map paths")
    p.add_argument("--detectors", help="comma-separated subset of sobel,log,canny,hed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.add_argument("--mode", choices=["per-batch", "frozen"], help="AME weight mode")
    p.add_argument("--weights", help="frozen weights JSON (implies --mode frozen)")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    p.add_argument("--lq-scale", type=int, help="upsampling factor for {lq: ...} manifest entries (default 4)")
    p.add_argument(
        "--edge-source",
        choices=["upsampled", "raw"],
        help="detect on upsampled LQ images (default) or on the raw LQ images",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"edgekit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="write edge maps for every manifest image")
    _add_common(p)
    p = sub.add_parser("weights", help="dataset-level entropy weights")
    _add_common(p)
    p = sub.add_parser("evaluate", help="PSNR/SSIM, edge losses and AME per pair")
    _add_common(p)

    p = sub.add_parser("fuse-demo", help="gate two feature tensors with a semantic MLP")
    p.add_argument("--mlp", required=True, help="MLP weights JSON")
    p.add_argument("--z-sem", required=True, help="semantic vector JSON")
    p.add_argument("--f-c", required=True, help="Canny-stream feature container")
    p.add_argument("--f-h", required=True, help="HED-stream feature container")
    p.add_argument("--out", default="edgekit-out", help="output directory")
    return parser


def _run_config(args) -> RunConfig:
    overrides = {
        "manifest": args.manifest,
        "hed_manifest": args.hed_manifest,
        "out": args.out,
        "jobs": args.jobs,
        "mode": args.mode or ("frozen" if args.weights else None),
        "lq_scale": args.lq_scale,
        "edge_source": args.edge_source,
    }
    if args.detectors:
        overrides["detectors"] = tuple(d for d in args.detectors.split(",") if d)
        overrides["detectors_explicit"] = True
    if args.no_figures:
        overrides["figures"] = False
    if args.config:
        cfg = RunConfig.from_file(args.config, **overrides)
    else:
        cfg = RunConfig.from_dict({}, **overrides)
    if not cfg.manifest:
        raise EdgeKitError("no manifest given (use --manifest or the config file)")
    return cfg


def cmd_detect(args) -> int:
    cfg = _run_config(args)
    index, code = run_detect(cfg)
    _status(code == 0, f"{len(index['outputs'])} edge maps written to {cfg.out}")
    for failure in index["failures"]:
        _status(False, f"{failure['image']}: {failure['error']}")
    return code


def cmd_weights(args) -> int:
    cfg = _run_config(args)
    weights, entropy_doc = run_weights(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    weights.save(out / "weights.json")
    (out / "entropy_report.json").write_text(json.dumps(entropy_doc, indent=2) + "\n")
    if cfg.figures:
        from .plotting import plot_weights

        plot_weights(weights.labels, weights.weights, weights.entropies, out / "figures" / "weights.png")
    note = " (uniform fallback)" if weights.fallback else ""
    _status(True, f"weights over {weights.n_samples} pairs written to {out / 'weights.json'}{note}")
    for label, w in zip(weights.labels, weights.weights):
        print(f"{label}\t{w:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    report, code = run_evaluate(cfg, args.weights)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report))
    (out / "report.csv").write_text(report_csv(report))
    if cfg.figures:
        from .plotting import plot_pairs, plot_weights

        batch = report["batch"]
        plot_weights(batch["labels"], batch["weights"], batch["entropies"], out / "figures" / "weights.png")
        plot_pairs(report, out / "figures" / "per_pair.png")
    batch = report["batch"]
    _status(
        code == 0,
        f"{batch['n_pairs']} pairs: mean PSNR {batch['mean_psnr']}, "
        f"mean SSIM {batch['mean_ssim']:.4f}, mean AME {batch['mean_ame']:.6f}",
    )
    for failure in report["failures"]:
        _status(False, f"pair {failure['index']}: {failure['error']}")
    return code


def cmd_fuse_demo(args) -> int:
    mlp = GateMlp.load(args.mlp)
    z_sem = load_semantic_vector(args.z_sem)
    g, fused = gate_pipeline(mlp, z_sem, read_latent(args.f_c), read_latent(args.f_h))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_latent(fused, out / "f_edge.eklt")
    (out / "gate.json").write_text(json.dumps({"beta_c": g.beta_c, "beta_h": g.beta_h}, indent=2) + "\n")
    print(f"beta_c={g.beta_c!r}")
    print(f"beta_h={g.beta_h!r}")
    return 0


COMMANDS = {
    "detect": cmd_detect,
    "weights": cmd_weights,
    "evaluate": cmd_evaluate,
    "fuse-demo": cmd_fuse_demo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (EdgeKitError, OSError, json.JSONDecodeError, KeyError) as exc:
        _status(False, f"{type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
