"""Mean intersection-over-union over pooled per-class pixel counts.

Label maps use 0 for background and k for ``classes[k-1]``. For each class
the TP/FP/FN counts are pooled over every pixel of every evaluated image
before the ratio is taken (the standard benchmark convention, rather than
averaging per-image IoUs). A class absent from both predictions and ground
truth scores 1.0 by convention and is flagged in the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyEvaluation, ShapeMismatch


@dataclass(frozen=True)
class FoldReport:
    per_class_iou: dict[str, float]
    miou: float
    absent_classes: tuple[str, ...]

    def __post_init__(self):
        values = list(self.per_class_iou.values())
        assert abs(self.miou - float(np.mean(values))) <= 1e-12


def confusion_counts(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """[num_classes, 3] array of pooled (TP, FP, FN) counts."""
    out = np.zeros((num_classes, 3), dtype=np.int64)
    for c in range(1, num_classes + 1):
        p = pred == c
        g = gt == c
        out[c - 1, 0] = np.count_nonzero(p & g)
        out[c - 1, 1] = np.count_nonzero(p & ~g)
        out[c - 1, 2] = np.count_nonzero(~p & g)
    return out


def miou(pred_label_maps, gt_label_maps, classes) -> FoldReport:
    """Per-class IoU pooled over all images, and their arithmetic mean."""
    preds = [np.asarray(p) for p in pred_label_maps]
    gts = [np.asarray(g) for g in gt_label_maps]
    classes = list(classes)
    if not preds or not classes:
        raise EmptyEvaluation("nothing to evaluate")
    if len(preds) != len(gts):
        raise ShapeMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    totals = np.zeros((len(classes), 3), dtype=np.int64)
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
        totals += confusion_counts(p, g, len(classes))
    per_class: dict[str, float] = {}
    absent: list[str] = []
    for idx, name in enumerate(classes):
        tp, fp, fn = totals[idx]
        denom = tp + fp + fn
        if denom == 0:
            per_class[name] = 1.0
            absent.append(name)
        else:
            per_class[name] = float(tp / denom)
    return FoldReport(
        per_class_iou=per_class,
        miou=float(np.mean(list(per_class.values()))),
        absent_classes=tuple(absent),
    )
