"""Command-line entry point: ``entroboot <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import coco, files, pipeline, theory
from .bootstrap import BootstrapConfig, bootstrap_entropy, normalize
from .instancer import StageDump, instances_from_labels, run_instancing
from .metrics import detection_rate, map_suite
from .sparsify import SparsifyConfig, estimate_epsilon, rasterize_points, sample_points
from .synth import derive_seed, generate_scene, write_scene


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _section_overrides(section: str, assignments: Sequence[str]) -> List[str]:
    top = {f.name for f in dataclasses.fields(pipeline.RunConfig)}
    out = []
    for a in assignments:
        key, _, value = a.partition("=")
        key = key.strip()
        out.append(a if "." in key or key in top else f"{section}.{key}={value}")
    return out


def _run_config(args, section: Optional[str] = None) -> pipeline.RunConfig:
    sets = list(args.set or [])
    if section:
        sets = _section_overrides(section, sets)
    config = pipeline.load_config(getattr(args, "config", None), sets)
    flags = {}
    for attr, key in (("out", "output_dir"), ("n_images", "n_images"), ("seed", "master_seed")):
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = str(value) if key == "output_dir" else value
    if getattr(args, "debug_stages", False):
        flags["debug_stages"] = True
    config = pipeline.apply_overrides(config, flags)
    config.validate()
    return config


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    config = _run_config(args, "scene")
    out = Path(config.output_dir)
    for i in range(config.n_images):
        scene = dataclasses.replace(config.scene, seed=derive_seed(config.master_seed, i))
        image, labels = generate_scene(scene)
        write_scene(out / pipeline.image_name(i), image, labels)
    print(f"wrote {config.n_images} scenes to {out}")
    return 0


def cmd_sparsify(args) -> int:
    gt = files.read_labels(args.labels)
    config = SparsifyConfig(radius=args.radius, keep_fraction=args.keep, jitter_max=args.jitter,
                            jitter_mode=args.jitter_mode, seed=args.seed)
    points = sample_points(gt, config)
    sparse = rasterize_points(points, config.radius, gt.shape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_points(out / "points.json", points)
    files.write_mask(out / "sparse.png", sparse)
    eps = estimate_epsilon(sparse, gt) if gt.any() else None
    files.write_json(out / "epsilon.json", {
        "points": len(points),
        "labeled_nucleus_pixels": eps.labeled_nucleus_pixels if eps else 0,
        "total_nucleus_pixels": eps.total_nucleus_pixels if eps else 0,
        "epsilon": eps.epsilon if eps else None,
    })
    print(f"{len(points)} points, epsilon {eps.epsilon:.6g}" if eps else f"{len(points)} points")
    return 0


def cmd_bootstrap(args) -> int:
    image = files.read_image(args.image)
    sparse = files.read_mask(args.sparse)
    config = BootstrapConfig(bins=args.bins, laplace_alpha=args.alpha,
                             feature_sigma=args.feature_sigma, std_window=args.std_window)
    prob, raw = bootstrap_entropy(image, sparse, config)
    entropy, lo, hi = normalize(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_grid(out / "prob.png", prob)
    files.write_grid(out / "entropy.png", entropy, meta={"raw_lo": lo, "raw_hi": hi})
    print(f"entropy range [{lo:.6g}, {hi:.6g}] nats")
    return 0


def cmd_instance(args) -> int:
    config = _run_config(args, "instancer").instancer
    entropy = files.read_grid(args.entropy)
    points = files.read_points(args.points)
    image = files.read_image(args.image)
    stages = StageDump() if args.debug_stages else None
    result = run_instancing(entropy, points, image, config, stages)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_labels(out / "instances.png", result.to_label_map())
    doc = coco.export_coco([(0, Path(args.image).name, entropy.shape, result)])
    coco.write_coco(out / "instances_coco.json", doc)
    if stages is not None:
        pipeline.write_stage_pngs(out / "stages", stages)
    print(f"{len(result)} instances from {len(points)} points")
    return 0


def _load_gt(path: Path):
    """``[(image_id, label_map)]`` from a label PNG, a run directory or a COCO file."""
    if path.is_dir():
        found = []
        for d in sorted(path.iterdir()):
            if (d / "labels.png").exists():
                digits = "".join(c for c in d.name if c.isdigit())
                found.append((int(digits) if digits else len(found), files.read_labels(d / "labels.png")))
        if not found:
            raise ValueError(f"{path}: no labels.png found")
        return found
    if path.suffix.lower() == ".json":
        images, anns = coco.load_coco(path)
        return [(i, coco.label_map_from_annotations(anns.get(i, []), (im["height"], im["width"])))
                for i, im in sorted(images.items())]
    return [(0, files.read_labels(path))]


def cmd_eval(args) -> int:
    gts = _load_gt(Path(args.gt))
    _, pred_anns = coco.load_coco(args.pred)
    if len(gts) == 1 and len(pred_anns) == 1:
        pred_anns = {gts[0][0]: next(iter(pred_anns.values()))}
    alphas = pipeline.EvalConfig().alphas
    rows, curves, per_image = [], [], []
    for image_id, gt in gts:
        preds = coco.predictions_from_annotations(pred_anns.get(image_id, []))
        with_masks = all(p.mask is not None for p in preds)
        reports = [detection_rate(preds, gt, a) for a in alphas]
        m = {"n_gt": len(np.unique(gt[gt > 0])), "n_pred": len(preds)}
        m.update({f"D_{r.alpha:.2f}": r.rate for r in reports})
        m.update({f"bbox_{k}": v for k, v in map_suite(preds, gt, "bbox").items()})
        if with_masks:
            m.update({f"segm_{k}": v for k, v in map_suite(preds, gt, "segm").items()})
        per_image.append(m)
        curves.extend([image_id, "detection", r.alpha, r.rate] for r in reports)
    keys = [k for k in per_image[0] if all(k in m for m in per_image)]
    for (image_id, _), m in zip(gts, per_image):
        rows.append([image_id] + [m[k] for k in keys])
    rows.append(["mean"] + [float(np.mean([m[k] for m in per_image])) for k in keys])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_csv(out / "metrics.csv", ["image"] + keys, rows)
    pipeline.write_csv(out / "curves.csv", ["image", "curve", "threshold", "value"], curves)
    mean = dict(zip(keys, rows[-1][1:]))
    print(f"{len(gts)} images, mean D_0.50 {mean['D_0.50']:.4f}, bbox mAP50 {mean['bbox_mAP50']:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    config = _run_config(args)
    out, summary = pipeline.run_pipeline(config, args.threads)
    print(f"{summary['n_images']} images, {summary['n_failed']} failed -> {out}")
    if "auroc" in summary:
        print(f"mean peak Dice {summary['peak_dice']:.4f}, mean AUROC {summary['auroc']:.4f}, "
              f"mean D_0.50 {summary.get('D_0.50', math.nan):.4f}")
    return 1 if summary["n_failed"] else 0


def cmd_ablate(args) -> int:
    config = _run_config(args)
    spec = pipeline.AblationSpec(args.axis, tuple(_floats(args.values)), config)
    try:
        rows = pipeline.run_ablation(spec, args.threads)
        status = 0
    except pipeline.AblationFailure as exc:
        rows, status = exc.rows, 1
        print(f"warning: {exc}", file=sys.stderr)
    for row in rows:
        print(",".join(pipeline.format_value(v) for v in row))
    return status


def cmd_verify_theory(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = theory.theory_grid(_floats(args.eps), _floats(args.x))
    pipeline.write_csv(out / "theory.csv", ["epsilon", "x", "h_exact", "h_approx", "dominant_fraction"],
                       [dataclasses.astuple(p) for p in grid])
    expected = args.p_ct * args.mc_eps
    sigma = math.sqrt(expected * (1 - expected) / args.mc_trials)
    rows, within3 = [], 0
    for seed in range(args.mc_seeds):
        rate, h = theory.monte_carlo_label_sim(args.p_ct, args.mc_eps, args.mc_trials, seed)
        z = (rate - expected) / sigma
        within3 += abs(z) <= 3
        rows.append([seed, expected, rate, z, theory.binary_entropy(expected), h])
    pipeline.write_csv(out / "montecarlo.csv",
                       ["seed", "expected_rate", "empirical_rate", "z", "expected_entropy", "empirical_entropy"],
                       rows)
    print(f"{len(grid)} theory points; Monte Carlo {within3}/{args.mc_seeds} seeds within 3 sigma")
    return 0


def cmd_export_coco(args) -> int:
    entries = []
    for raw in args.inputs:
        path = Path(raw)
        sources = sorted(path.glob("*/instances.png")) if path.is_dir() else [path]
        for src in sources:
            labels = files.read_labels(src)
            name = str(src.parent.name) if path.is_dir() else src.name
            entries.append((len(entries), name, labels.shape, instances_from_labels(labels)))
    coco.write_coco(args.out, coco.export_coco(entries))
    print(f"{len(entries)} images -> {args.out}")
    return 0


# -- parser ------------------------------------------------------------------

def _add_run_options(p: argparse.ArgumentParser, n_images: bool = True) -> None:
    p.add_argument("--config", help="TOML file with flat dotted keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    if n_images:
        p.add_argument("--n-images", dest="n_images", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entroboot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    _add_run_options(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sparsify", help="sample point annotations from a label map")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--keep", type=float, default=1.0)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--jitter-mode", choices=("uniform", "gaussian"), default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("bootstrap", help="entropy map from an image and sparse labels")
    p.add_argument("--image", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing")
    p.add_argument("--feature-sigma", type=float, default=2.0)
    p.add_argument("--std-window", type=int, default=5)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("instance", help="instances from an entropy map and points")
    p.add_argument("--entropy", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="instancer setting (repeatable)")
    p.add_argument("--debug-stages", action="store_true")
    p.set_defaults(func=cmd_instance)

    p = sub.add_parser("eval", help="detection rate and AP of COCO predictions")
    p.add_argument("--gt", required=True, help="labels.png, run directory or COCO JSON")
    p.add_argument("--pred", required=True, help="COCO JSON (scores optional)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="end-to-end run over a synthetic suite")
    _add_run_options(p)
    p.add_argument("--threads", type=int)
    p.add_argument("--debug-stages", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ablate", help="sweep one annotation knob")
    _add_run_options(p)
    p.add_argument("--axis", required=True, choices=sorted(pipeline.ABLATION_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify-theory", help="closed-form and Monte Carlo entropy tables")
    p.add_argument("--out", required=True)
    p.add_argument("--eps", default="0.1,0.01,0.001,0.0001,1e-05,1e-06,1e-07,1e-08")
    p.add_argument("--x", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--p-ct", type=float, default=0.3)
    p.add_argument("--mc-eps", type=float, default=0.05)
    p.add_argument("--mc-trials", type=int, default=1_000_000)
    p.add_argument("--mc-seeds", type=int, default=50)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("export-coco", help="COCO JSON from instance label maps")
    p.add_argument("inputs", nargs="+", help="instances.png files or run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_coco)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
