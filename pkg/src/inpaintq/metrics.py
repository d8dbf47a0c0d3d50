"""Detection metrics: IoU, greedy matching, PR curves, AP, mAP50 and mAP50-95.

Predictions are objects with ``box`` (a :class:`RoiBox`), ``cls`` and
``score``; ground truths are plain :class:`RoiBox` values carrying ``cls``.
Per-image inputs are either sequences aligned by position or dicts keyed by
image id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .augment import RoiBox
from .errors import NoGroundTruth

THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)


def iou(a: RoiBox, b: RoiBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # edge differences can round above the stored extents, so clamp
    return float(min(1.0, inter / (a.area + b.area - inter)))


def _order(preds):
    """Indices by descending score; equal scores keep input order."""
    scores = np.array([p.score for p in preds], dtype=np.float64)
    return np.argsort(-scores, kind="stable")


@dataclass
class MatchTable:
    scores: np.ndarray  # descending
    tp: np.ndarray  # bool, aligned with scores
    n_gt: int

    @property
    def fn(self) -> int:
        return self.n_gt - int(self.tp.sum())

    @property
    def fp(self) -> int:
        return int((~self.tp).sum())

    @staticmethod
    def concat(tables) -> "MatchTable":
        tables = list(tables)
        if not tables:
            return MatchTable(np.zeros(0), np.zeros(0, bool), 0)
        scores = np.concatenate([t.scores for t in tables])
        tp = np.concatenate([t.tp for t in tables])
        order = np.argsort(-scores, kind="stable")
        return MatchTable(scores[order], tp[order], sum(t.n_gt for t in tables))


def match_detections(preds, gts, t: float) -> MatchTable:
    """Greedy by score: each prediction takes the unmatched GT of highest IoU if that IoU >= t.

    Classes are not inspected; callers filter per class.
    """
    preds = list(preds)
    order = _order(preds)
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(preds), dtype=bool)
    for rank, i in enumerate(order):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i].box, g)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= t:
            taken[best_j] = True
            tp[rank] = True
    scores = np.array([preds[i].score for i in order], dtype=np.float64)
    return MatchTable(scores, tp, len(gts))


def pr_curve(table: MatchTable) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (recall, precision) after each score-ranked prediction."""
    if table.n_gt == 0:
        raise NoGroundTruth("precision-recall needs at least one ground truth")
    ctp = np.cumsum(table.tp)
    ranks = np.arange(1, len(table.tp) + 1)
    return ctp / table.n_gt, ctp / ranks


def average_precision(curve) -> float:
    """All-point area under the monotone precision envelope, recall starting at 0."""
    recall, precision = (np.asarray(c, dtype=np.float64) for c in curve)
    if recall.size == 0:
        return 0.0
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[0.0], precision])
    env = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * env[1:]))


def _as_dict(per_image):
    if isinstance(per_image, dict):
        return per_image
    return dict(enumerate(per_image))


def _class_table(preds, gts, cls, t):
    tables = []
    for k in gts:
        g = [b for b in gts[k] if b.cls == cls]
        p = [d for d in preds.get(k, ()) if d.cls == cls]
        tables.append(match_detections(p, g, t))
    return MatchTable.concat(tables)


def _classes(gts):
    classes = sorted({b.cls for boxes in gts.values() for b in boxes})
    if not classes:
        raise NoGroundTruth("no ground-truth boxes in any image")
    return classes


def ap_table(preds, gts, thresholds=THRESHOLDS) -> dict[int, np.ndarray]:
    """Per-class AP at each threshold. Classes without ground truth are skipped."""
    preds, gts = _as_dict(preds), _as_dict(gts)
    unknown = set(preds) - set(gts)
    if unknown:
        raise KeyError(f"predictions for images without ground-truth entries: {sorted(unknown)[:5]}")
    out = {}
    for c in _classes(gts):
        out[c] = np.array([average_precision(pr_curve(_class_table(preds, gts, c, t))) for t in thresholds])
    return out


def map50(preds, gts) -> float:
    aps = ap_table(preds, gts, thresholds=[0.5])
    return float(np.mean([v[0] for v in aps.values()]))


def map5095(preds, gts) -> float:
    aps = ap_table(preds, gts)
    return float(np.mean(np.mean(np.stack(list(aps.values())), axis=0)))


def metric_report(preds, gts) -> dict:
    aps = ap_table(preds, gts)
    return {
        "map50": float(np.mean([v[0] for v in aps.values()])),
        "map5095": float(np.mean(np.stack(list(aps.values())))),
        "per_class": {str(c): {"ap50": float(v[0]), "ap5095": float(v.mean())} for c, v in aps.items()},
    }


def write_report(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
