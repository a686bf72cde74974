"""COCO instance JSON: run-length mask codec, export and import.

Masks are run-length encoded in column-major order starting with a run of
zeros, as in the COCO format. Both the plain list form of ``counts`` and
the compressed string form are read; the list form is written.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .metrics import ScoredPrediction
from .raster import BBox

CATEGORY = {"id": 1, "name": "nucleus", "supercategory": "nucleus"}


def rle_encode(mask: np.ndarray) -> Dict:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.ravel(order="F").astype(np.int8)
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.r_[0, change, flat.size]
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [h, w], "counts": counts}


def _counts_from_string(s: str) -> List[int]:
    counts: List[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def counts_to_string(counts: Sequence[int]) -> str:
    """Compressed string form of an RLE ``counts`` list."""
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_decode(rle: Dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if isinstance(counts, (str, bytes)):
        counts = _counts_from_string(counts.decode() if isinstance(counts, bytes) else counts)
    if sum(counts) != h * w:
        raise ValueError("RLE counts do not cover the mask")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((w, h)).T.copy()


def _annotation(ann_id: int, image_id: int, mask: np.ndarray, bbox: BBox,
                score: Optional[float]) -> Dict:
    ann = {
        "id": ann_id,
        "image_id": image_id,
        "category_id": CATEGORY["id"],
        "segmentation": rle_encode(mask),
        "bbox": bbox.to_xywh(),
        "area": int(np.count_nonzero(mask)),
        "iscrowd": 0,
    }
    if score is not None:
        ann["score"] = float(score)
    return ann


def export_coco(images: Iterable[Tuple[int, str, Tuple[int, int], Iterable]]) -> Dict:
    """Build a COCO instance document.

    ``images`` yields ``(image_id, file_name, (height, width), instances)``
    where each instance is an :class:`~entroboot.instancer.Instance` or a
    :class:`~entroboot.metrics.ScoredPrediction` with a mask. Only the
    latter carry a ``score`` field.
    """
    doc = {"images": [], "annotations": [], "categories": [dict(CATEGORY)]}
    ann_id = 1
    for image_id, file_name, (h, w), instances in images:
        doc["images"].append({"id": int(image_id), "file_name": file_name, "height": h, "width": w})
        for inst in instances:
            if isinstance(inst, ScoredPrediction):
                mask, score = inst.mask, inst.score
            else:
                mask, score = inst.full_mask((h, w)), None
            doc["annotations"].append(_annotation(ann_id, int(image_id), mask, inst.bbox, score))
            ann_id += 1
    return doc


def write_coco(path, doc: Dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def _bbox_from_xywh(xywh) -> BBox:
    x, y, w, h = (float(v) for v in xywh)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    return BBox(x0, y0, max(x0 + 1, int(np.ceil(x + w))), max(y0 + 1, int(np.ceil(y + h))))


def load_coco(path) -> Tuple[Dict[int, Dict], Dict[int, List[Dict]]]:
    """Read a COCO document (a dict, or a bare result list) into image info
    and annotations grouped by image id."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        doc = {"images": [], "annotations": doc}
    images = {int(im["id"]): im for im in doc.get("images", [])}
    grouped: Dict[int, List[Dict]] = {i: [] for i in images}
    for ann in doc.get("annotations", []):
        grouped.setdefault(int(ann["image_id"]), []).append(ann)
    return images, grouped


def predictions_from_annotations(anns: Sequence[Dict]) -> List[ScoredPrediction]:
    """Annotations to scored predictions; a missing score counts as 1.0."""
    out = []
    for ann in anns:
        mask = rle_decode(ann["segmentation"]) if isinstance(ann.get("segmentation"), dict) else None
        out.append(ScoredPrediction(_bbox_from_xywh(ann["bbox"]), float(ann.get("score", 1.0)), mask))
    return out


def label_map_from_annotations(anns: Sequence[Dict], shape: Tuple[int, int]) -> np.ndarray:
    """Rasterize mask annotations into a label map; later annotations win overlaps."""
    labels = np.zeros(shape, dtype=np.int32)
    for k, ann in enumerate(anns, start=1):
        labels[rle_decode(ann["segmentation"])] = k
    return labels
