"""Raster and annotation file formats.

Grayscale input is read from 8/16-bit PNG or PGM (P2/P5) and normalized to
[0, 1]. Float grids are written as 16-bit PNG; when the value range is not
[0, 1] a JSON sidecar records the ``lo``/``hi`` constants needed to undo
the quantization. Label maps are 16-bit PNGs of ids with a sidecar mapping
each id to its ``[x0, y0, x1, y1]`` box.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from PIL import Image

from .raster import component_bboxes

PathLike = Union[str, Path]

_U16 = 65535


def read_image(path: PathLike) -> np.ndarray:
    """Read a grayscale raster and normalize it to ``float64`` in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("1", "P"):
            im = im.convert("L")
            mode = "L"
        data = np.array(im)
    if mode == "L":
        return data.astype(np.float64) / 255.0
    if mode.startswith("I"):
        return data.astype(np.float64) / _U16
    raise ValueError(f"{path}: unsupported image mode {mode!r} (grayscale only)")


def _sidecar(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def write_grid(path: PathLike, grid: np.ndarray, lo: Optional[float] = None,
               hi: Optional[float] = None, meta: Optional[dict] = None) -> None:
    """Quantize ``grid`` to 16 bits over ``[lo, hi]`` and save as PNG.

    With the default ``lo=0, hi=1`` and no ``meta`` no sidecar is written.
    """
    grid = np.asarray(grid, dtype=np.float64)
    lo = 0.0 if lo is None else float(lo)
    hi = 1.0 if hi is None else float(hi)
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.rint((grid - lo) / span * _U16), 0, _U16).astype(np.uint16)
    Image.fromarray(q).save(path)
    if meta is not None or (lo, hi) != (0.0, 1.0):
        info = {"lo": lo, "hi": hi}
        info.update(meta or {})
        _sidecar(path).write_text(json.dumps(info, indent=2, sort_keys=True))


def read_grid(path: PathLike) -> np.ndarray:
    """Inverse of :func:`write_grid` (up to 16-bit quantization)."""
    with Image.open(path) as im:
        q = np.array(im).astype(np.float64)
    side = _sidecar(path)
    lo, hi = 0.0, 1.0
    if side.exists():
        info = json.loads(side.read_text())
        lo, hi = float(info.get("lo", 0.0)), float(info.get("hi", 1.0))
    return lo + q / _U16 * (hi - lo)


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def read_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im) > 0


def write_labels(path: PathLike, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > _U16):
        raise ValueError("label ids must fit in 16 bits")
    Image.fromarray(labels.astype(np.uint16)).save(path)
    boxes = {str(i): list(b) for i, b in component_bboxes(labels)}
    _sidecar(path).write_text(json.dumps(boxes, indent=2))


def read_labels(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im).astype(np.int32)


def write_points(path: PathLike, points) -> None:
    rows = [{"x": int(p.x), "y": int(p.y),
             "source_id": None if p.source_id is None else int(p.source_id)}
            for p in points]
    Path(path).write_text(json.dumps(rows, indent=1))


def read_points(path: PathLike):
    from .sparsify import PointAnnotation

    rows = json.loads(Path(path).read_text())
    return [PointAnnotation(int(r["x"]), int(r["y"]), r.get("source_id")) for r in rows]


def write_json(path: PathLike, obj: Dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
