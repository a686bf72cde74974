"""Run configuration, the end-to-end pipeline and the ablation runner.

Every image ``i`` of a run uses the seed ``master_seed ^ i`` for its scene;
its point sampling uses that seed XOR a fixed salt. Images are processed
by a bounded thread pool and merged in index order, so outputs do not
depend on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import coco, files
from .bootstrap import BootstrapConfig, bootstrap_entropy, normalize
from .instancer import InstancerConfig, InstanceSet, StageDump, run_instancing
from .metrics import DETECTION_ALPHAS, detection_rate, dice_curve, roc_auroc
from .sparsify import SparsifyConfig, estimate_epsilon, rasterize_points, sample_points
from .synth import SceneConfig, derive_seed, generate_scene

SPARSIFY_SALT = 0x9E3779B97F4A7C15
THREADS_ENV = "ENTROBOOT_THREADS"


@dataclass(frozen=True)
class EvalConfig:
    alphas: Tuple[float, ...] = DETECTION_ALPHAS
    n_thresholds: int = 101
    pooled_detection: bool = False

    def validate(self) -> None:
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            raise ValueError("alphas must be non-empty and lie in (0, 1)")
        if list(self.alphas) != sorted(set(self.alphas)):
            raise ValueError("alphas must be strictly increasing")
        if self.n_thresholds < 2:
            raise ValueError("n_thresholds must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    sparsify: SparsifyConfig = field(default_factory=SparsifyConfig)
    instancer: InstancerConfig = field(default_factory=InstancerConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "run"
    n_images: int = 20
    master_seed: int = 0
    debug_stages: bool = False

    def validate(self) -> None:
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        self.scene.validate()
        self.sparsify.validate()
        self.instancer.validate()
        self.eval.validate()
        if self.bootstrap.bins < 2 or self.bootstrap.laplace_alpha <= 0:
            raise ValueError("bootstrap needs bins >= 2 and laplace_alpha > 0")


_SECTIONS = ("scene", "sparsify", "instancer", "bootstrap", "eval")


# -- configuration files -----------------------------------------------------

def _flatten(tree: Mapping, prefix: str = "") -> Dict[str, Any]:
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(current: Any, value: Any, key: str) -> Any:
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{key}: expected a list")
        return tuple(float(v) for v in value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected true or false")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError(f"{key}: expected an integer")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool):
            raise ValueError(f"{key}: expected a number")
        return float(value)
    return str(value)


def apply_overrides(config: RunConfig, values: Mapping[str, Any]) -> RunConfig:
    """Return ``config`` with dotted keys such as ``scene.noise_sigma`` replaced."""
    nested: Dict[str, Dict[str, Any]] = {s: {} for s in _SECTIONS}
    top: Dict[str, Any] = {}
    for key, value in _flatten(values).items():
        head, _, rest = key.partition(".")
        if rest:
            if head not in nested:
                raise ValueError(f"unknown config section {head!r}")
            section = getattr(config, head)
            if rest not in {f.name for f in dataclasses.fields(section)}:
                raise ValueError(f"unknown config key {key!r}")
            nested[head][rest] = _coerce(getattr(section, rest), value, key)
        else:
            if key in _SECTIONS or key not in {f.name for f in dataclasses.fields(config)}:
                raise ValueError(f"unknown config key {key!r}")
            top[key] = _coerce(getattr(config, key), value, key)
    changes = {s: dataclasses.replace(getattr(config, s), **kv) for s, kv in nested.items() if kv}
    changes.update(top)
    return dataclasses.replace(config, **changes)


def parse_assignment(text: str) -> Tuple[str, Any]:
    """Split ``key=value``; the value is read as a TOML literal, else as a bare string."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ValueError(f"expected key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip(), value


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Defaults, then the TOML file at ``path``, then ``key=value`` overrides."""
    config = RunConfig()
    if path is not None:
        with open(path, "rb") as fh:
            config = apply_overrides(config, tomllib.load(fh))
    if overrides:
        config = apply_overrides(config, dict(parse_assignment(o) for o in overrides))
    config.validate()
    return config


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return json.dumps(str(value))


def dump_config(config: RunConfig) -> str:
    """Flat dotted-key TOML text that :func:`load_config` reads back."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {_toml_value(getattr(value, g.name))}")
        else:
            lines.append(f"{f.name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def worker_count(requested: Optional[int] = None) -> int:
    """Requested worker count, capped by ``ENTROBOOT_THREADS`` when set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


# -- per-image processing ----------------------------------------------------

@dataclass
class ImageResult:
    index: int
    seed: int
    metrics: Dict[str, Any] = field(default_factory=dict)
    dice_curve: List[Tuple[float, float]] = field(default_factory=list)
    detection: List[Tuple[float, int, int]] = field(default_factory=list)  # (alpha, tp, n_gt)
    instances: Optional[InstanceSet] = None
    arrays: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def image_name(index: int) -> str:
    return f"img_{index:04d}"


def process_image(config: RunConfig, index: int, keep_arrays: bool = False) -> ImageResult:
    """Run synth, sparsify, bootstrap, instancer and metrics for image ``index``."""
    seed = derive_seed(config.master_seed, index)
    result = ImageResult(index, seed)
    try:
        image, gt = generate_scene(dataclasses.replace(config.scene, seed=seed))
        sp = dataclasses.replace(config.sparsify, seed=seed ^ SPARSIFY_SALT)
        points = sample_points(gt, sp)
        sparse = rasterize_points(points, sp.radius, gt.shape)
        prob, raw_entropy = bootstrap_entropy(image, sparse, config.bootstrap)
        entropy, lo, hi = normalize(raw_entropy)
        fg = gt > 0

        curve, (peak_t, peak_d) = dice_curve(entropy, fg, config.eval.n_thresholds)
        _, auroc = roc_auroc(entropy, fg)
        stages = StageDump() if config.debug_stages and keep_arrays else None
        instances = run_instancing(entropy, points, image, config.instancer, stages)
        reports = [detection_rate(instances, gt, a) for a in config.eval.alphas]

        m = result.metrics
        m["n_gt"] = int(gt.max())
        m["n_points"] = len(points)
        m["epsilon"] = estimate_epsilon(sparse, gt).epsilon
        m["peak_threshold"] = peak_t
        m["peak_dice"] = peak_d
        m["auroc"] = auroc
        m["entropy_nucleus"] = float(raw_entropy[fg].mean())
        m["entropy_background"] = float(raw_entropy[~fg].mean())
        m["n_instances"] = len(instances)
        for r in reports:
            m[f"D_{r.alpha:.2f}"] = r.rate
        result.dice_curve = curve.rows()
        result.detection = [(r.alpha, r.tp, r.n_gt) for r in reports]
        result.instances = instances
        if keep_arrays:
            result.arrays = {"image": image, "labels": gt, "points": points, "sparse": sparse,
                             "prob": prob, "entropy": entropy, "entropy_range": (lo, hi),
                             "stages": stages}
    except Exception as exc:  # one bad scene must not end the run
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def process_images(config: RunConfig, threads: Optional[int] = None,
                   keep_arrays: bool = False) -> List[ImageResult]:
    """Process every image of the run; results come back in index order."""
    config.validate()
    n_workers = worker_count(threads)
    indices = range(config.n_images)
    if n_workers == 1:
        return [process_image(config, i, keep_arrays) for i in indices]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda i: process_image(config, i, keep_arrays), indices))


# -- aggregation and files ---------------------------------------------------

def format_value(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".6g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def aggregate(results: Sequence[ImageResult], pooled_detection: bool = False) -> Dict[str, Any]:
    """Mean of every per-image metric over successful images.

    Detection rates are averaged per image unless ``pooled_detection`` is
    set, in which case they are total matches over total nuclei.
    """
    good = [r for r in results if r.ok]
    out: Dict[str, Any] = {"n_images": len(results), "n_failed": len(results) - len(good)}
    if not good:
        return out
    for key in good[0].metrics:
        out[key] = float(np.mean([r.metrics[key] for r in good]))
    if pooled_detection:
        for j, (alpha, _, _) in enumerate(good[0].detection):
            tp = sum(r.detection[j][1] for r in good)
            n = sum(r.detection[j][2] for r in good)
            out[f"D_{alpha:.2f}"] = tp / n
    return out


def _metric_keys(results: Sequence[ImageResult]) -> List[str]:
    for r in results:
        if r.ok:
            return list(r.metrics)
    return []


def write_metrics(path: Path, results: Sequence[ImageResult], summary: Mapping[str, Any]) -> None:
    keys = _metric_keys(results)
    rows = []
    for r in results:
        rows.append([image_name(r.index), r.seed, "ok" if r.ok else r.error]
                    + [r.metrics.get(k) for k in keys])
    rows.append(["mean", "", f"{summary['n_failed']} failed"] + [summary.get(k) for k in keys])
    write_csv(path, ["image", "seed", "status"] + keys, rows)


def write_curves(path: Path, results: Sequence[ImageResult]) -> None:
    rows = []
    for r in results:
        name = image_name(r.index)
        rows.extend([name, "dice", t, v] for t, v in r.dice_curve)
        rows.extend([name, "detection", a, tp / n] for a, tp, n in r.detection)
    write_csv(path, ["image", "curve", "threshold", "value"], rows)


def _write_image_artifacts(directory: Path, result: ImageResult) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    a = result.arrays
    files.write_grid(directory / "image.png", a["image"])
    files.write_labels(directory / "labels.png", a["labels"])
    files.write_points(directory / "points.json", a["points"])
    files.write_mask(directory / "sparse.png", a["sparse"])
    files.write_grid(directory / "prob.png", a["prob"])
    lo, hi = a["entropy_range"]
    files.write_grid(directory / "entropy.png", a["entropy"], meta={"raw_lo": lo, "raw_hi": hi})
    files.write_labels(directory / "instances.png", result.instances.to_label_map())
    if a.get("stages") is not None:
        write_stage_pngs(directory / "stages", a["stages"])


def write_stage_pngs(directory: Path, stages: StageDump) -> None:
    """One PNG per intermediate stage; label maps keep their ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in stages.arrays.items():
        if arr.dtype == bool:
            files.write_mask(directory / f"{name}.png", arr)
        elif np.issubdtype(arr.dtype, np.integer):
            files.write_labels(directory / f"{name}.png", arr)
        else:
            files.write_grid(directory / f"{name}.png", np.clip(arr, 0.0, 1.0))


def run_pipeline(config: RunConfig, threads: Optional[int] = None) -> Tuple[Path, Dict[str, Any]]:
    """Run every image and write the run directory.

    Returns the directory and the aggregate summary; the summary's
    ``n_failed`` tells whether any image failed.
    """
    results = process_images(config, threads, keep_arrays=True)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(config))

    for r in results:
        d = out / image_name(r.index)
        if r.ok:
            _write_image_artifacts(d, r)
        else:
            d.mkdir(parents=True, exist_ok=True)
            (d / "error.txt").write_text(r.error + "\n")

    summary = aggregate(results, config.eval.pooled_detection)
    write_metrics(out / "metrics.csv", results, summary)
    write_curves(out / "curves.csv", results)
    files.write_json(out / "aggregate.json", summary)
    h, w = config.scene.height, config.scene.width
    doc = coco.export_coco((r.index, f"{image_name(r.index)}/image.png", (h, w), r.instances or [])
                           for r in results if r.ok)
    coco.write_coco(out / "instances_coco.json", doc)
    return out, summary


# -- ablation ----------------------------------------------------------------

ABLATION_AXES = {"radius": "radius", "keep_fraction": "keep_fraction", "jitter": "jitter_max"}


@dataclass(frozen=True)
class AblationSpec:
    axis: str
    values: Tuple[float, ...]
    base: RunConfig = field(default_factory=RunConfig)

    def config_for(self, value) -> RunConfig:
        knob = ABLATION_AXES[self.axis]
        current = getattr(self.base.sparsify, knob)
        value = _coerce(current, value, self.axis)
        return dataclasses.replace(self.base, sparsify=dataclasses.replace(self.base.sparsify, **{knob: value}))

    def validate(self) -> None:
        if self.axis not in ABLATION_AXES:
            raise ValueError(f"unknown ablation axis {self.axis!r}; expected one of {sorted(ABLATION_AXES)}")
        if not self.values:
            raise ValueError("ablation needs at least one value")
        for v in self.values:
            self.config_for(v).validate()


ABLATION_HEADER = ("axis", "value", "mean_peak_dice", "mean_auroc", "mean_D_0.5")


def run_ablation(spec: AblationSpec, threads: Optional[int] = None,
                 write: bool = True) -> List[Tuple]:
    """One row ``(axis, value, mean peak Dice, mean AUROC, mean D_0.5)`` per value."""
    spec.validate()
    if 0.5 not in [round(a, 2) for a in spec.base.eval.alphas]:
        raise ValueError("ablation needs 0.5 among the detection alphas")
    rows = []
    failed = 0
    for value in spec.values:
        config = spec.config_for(value)
        results = process_images(config, threads)
        failed += sum(not r.ok for r in results)
        s = aggregate(results, config.eval.pooled_detection)
        used = getattr(config.sparsify, ABLATION_AXES[spec.axis])
        rows.append((spec.axis, used, s.get("peak_dice", math.nan), s.get("auroc", math.nan),
                     s.get("D_0.50", math.nan)))
    if write:
        out = Path(spec.base.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "ablation.csv", ABLATION_HEADER, rows)
    if failed:
        raise AblationFailure(rows, failed)
    return rows


class AblationFailure(RuntimeError):
    """Some images failed; ``rows`` holds the aggregates over the rest."""

    def __init__(self, rows, failed: int):
        super().__init__(f"{failed} image runs failed during the ablation")
        self.rows = rows
