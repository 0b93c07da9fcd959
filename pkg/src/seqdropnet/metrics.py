"""Voxel- and lesion-level segmentation metrics with two-rater averaging.

Undefined values are reported as ``None``.  Conventions for empty masks:

* dice, jaccard: both masks empty -> 1.0
* ppv: empty prediction -> None
* tpr, ltpr: empty ground truth -> None
* lfpr: empty prediction -> 0.0
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from seqdropnet.errors import SizeMismatchError
from seqdropnet.labels import as_binary

METRIC_NAMES = ("dsc", "jaccard", "ppv", "tpr", "lfpr", "ltpr")
CONVENTIONS = {
    "dsc": "1.0 when prediction and ground truth are both empty",
    "jaccard": "1.0 when prediction and ground truth are both empty",
    "ppv": "undefined when prediction is empty",
    "tpr": "undefined when ground truth is empty",
    "lfpr": "0.0 when prediction is empty",
    "ltpr": "undefined when ground truth is empty",
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _pair(pred, gt):
    pred = as_binary(pred)
    gt = as_binary(gt)
    if pred.shape != gt.shape:
        raise SizeMismatchError(f"prediction {pred.shape} and ground truth {gt.shape} differ in dims")
    return pred, gt


def confusion(pred, gt) -> ConfusionCounts:
    pred, gt = _pair(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def jaccard(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def ppv(c: ConfusionCounts) -> float | None:
    denom = c.tp + c.fp
    return None if denom == 0 else c.tp / denom


def tpr(c: ConfusionCounts) -> float | None:
    denom = c.tp + c.fn
    return None if denom == 0 else c.tp / denom


# ---------------------------------------------------------------------------
# connected components


@dataclass
class ComponentLabeling:
    labels: np.ndarray  # int32, 0 = background, components 1..count
    count: int

    def voxels(self, label: int) -> np.ndarray:
        """(n, 3) voxel coordinates of one component."""
        return np.argwhere(self.labels == label)


def neighborhood(connectivity: int) -> np.ndarray:
    rank = {6: 1, 18: 2, 26: 3}.get(connectivity)
    if rank is None:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, rank)


def connected_components(mask, connectivity: int = 26) -> ComponentLabeling:
    """Label components; ids follow first visit in an x-fastest scan."""
    structure = neighborhood(connectivity)
    m = as_binary(mask)
    # scipy numbers components in C-order scan; transposing makes that scan x-fastest
    lab, count = ndimage.label(m.transpose(2, 1, 0), structure=structure)
    return ComponentLabeling(np.ascontiguousarray(lab.transpose(2, 1, 0)).astype(np.int32), int(count))


def _component_overlaps(a, b, connectivity, min_size):
    """For each component of ``a`` (above ``min_size``), how many voxels of ``b`` it covers."""
    comp = connected_components(a, connectivity)
    if comp.count == 0:
        return np.zeros(0, dtype=np.int64)
    sizes = np.bincount(comp.labels.ravel(), minlength=comp.count + 1)[1:]
    hits = np.bincount(comp.labels[b].ravel(), minlength=comp.count + 1)[1:]
    return hits[sizes >= min_size]


def ltpr(pred, gt, connectivity: int = 26, min_overlap: int = 1, min_lesion_size: int = 1) -> float | None:
    """Fraction of ground-truth lesions touched by at least ``min_overlap`` predicted voxels."""
    pred, gt = _pair(pred, gt)
    hits = _component_overlaps(gt, pred, connectivity, min_lesion_size)
    if hits.size == 0:
        return None
    return float(np.count_nonzero(hits >= min_overlap) / hits.size)


def lfpr(pred, gt, connectivity: int = 26, min_overlap: int = 1, min_lesion_size: int = 1) -> float:
    """Fraction of predicted lesions with fewer than ``min_overlap`` ground-truth voxels."""
    pred, gt = _pair(pred, gt)
    hits = _component_overlaps(pred, gt, connectivity, min_lesion_size)
    if hits.size == 0:
        return 0.0
    return float(np.count_nonzero(hits < min_overlap) / hits.size)


# ---------------------------------------------------------------------------
# reports


def evaluate(pred, gt, connectivity: int = 26, min_overlap: int = 1, min_lesion_size: int = 1) -> dict:
    c = confusion(pred, gt)
    return {
        "dsc": dice(c),
        "jaccard": jaccard(c),
        "ppv": ppv(c),
        "tpr": tpr(c),
        "lfpr": lfpr(pred, gt, connectivity, min_overlap, min_lesion_size),
        "ltpr": ltpr(pred, gt, connectivity, min_overlap, min_lesion_size),
    }


def average(rows) -> dict:
    """Per-metric arithmetic mean over the defined values; None if none are defined."""
    out = {}
    for name in METRIC_NAMES:
        vals = [r[name] for r in rows if r[name] is not None]
        out[name] = float(np.mean(vals)) if vals else None
    return out


@dataclass
class MetricsReport:
    rater_a: dict
    rater_b: dict
    avg: dict
    connectivity: int = 26
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def __getattr__(self, name):
        if name in METRIC_NAMES:
            return self.avg[name]
        raise AttributeError(name)

    def rows(self, case: str = "") -> list[dict]:
        return [
            {"case": case, "rater": r, **vals}
            for r, vals in (("A", self.rater_a), ("B", self.rater_b), ("avg", self.avg))
        ]

    def to_dict(self) -> dict:
        return {
            "A": self.rater_a,
            "B": self.rater_b,
            "avg": self.avg,
            "connectivity": self.connectivity,
            "conventions": self.conventions,
        }


def evaluate_two_raters(pred, gt_a, gt_b, connectivity: int = 26, min_overlap: int = 1, min_lesion_size: int = 1) -> MetricsReport:
    a = evaluate(pred, gt_a, connectivity, min_overlap, min_lesion_size)
    b = evaluate(pred, gt_b, connectivity, min_overlap, min_lesion_size)
    return MetricsReport(a, b, average([a, b]), connectivity)


def _fmt(v):
    return "NA" if v is None else f"{v:.6f}"


def rows_to_csv(rows, key_columns=("case", "rater")) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header_names = {"dsc": "DSC", "jaccard": "Jaccard", "ppv": "PPV", "tpr": "TPR", "lfpr": "LFPR", "ltpr": "LTPR"}
    writer.writerow(list(key_columns) + [header_names[m] for m in METRIC_NAMES])
    for r in rows:
        writer.writerow([r[k] for k in key_columns] + [_fmt(r[m]) for m in METRIC_NAMES])
    return buf.getvalue()


def write_report(rows, path, extra=None, key_columns=("case", "rater")) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json`` with the same rows."""
    path = Path(path)
    if path.suffix in (".csv", ".json"):
        path = path.with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    csv_path.write_text(rows_to_csv(rows, key_columns))
    doc = {"rows": rows, "conventions": CONVENTIONS}
    if extra:
        doc.update(extra)
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    return csv_path, json_path
