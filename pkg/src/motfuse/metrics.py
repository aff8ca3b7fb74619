"""Instance-level precision/recall/F-measure for moving-object masks.

Predicted and ground-truth moving instances are compared as
spatio-temporal tubes over the whole video: F(p, g) = 2|p & g| /
(|p| + |g|) with sizes counted across all frames. An optimal one-to-one
matching maximizes the total F; precision divides the matched total by
the number of predictions, so spurious predictions are penalized, and
recall divides by the number of ground-truth instances.

Empty-set conventions: both sides empty scores 1/1/1; an empty side is
"vacuously right" (its own metric is 1) while the other metric and the
F-measure drop to 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class ShapeMismatch(ValueError):
    """Prediction and ground-truth maps do not share dimensions."""


@dataclass(frozen=True)
class MetricReport:
    pu: float
    ru: float
    fu: float
    matches: tuple = field(default_factory=tuple)  # (pred_id, gt_id, f) per match

    def to_dict(self) -> dict:
        return {
            "Pu": self.pu,
            "Ru": self.ru,
            "Fu": self.fu,
            "matches": [
                {"pred_id": int(p), "gt_id": int(g), "f": float(f)}
                for p, g, f in self.matches
            ],
        }


def _f_measure(pu: float, ru: float) -> float:
    return 2.0 * pu * ru / (pu + ru) if pu + ru > 0 else 0.0


def _stack(maps) -> np.ndarray:
    arrs = [np.asarray(m) for m in maps]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise ShapeMismatch(f"frame shapes differ: {a.shape} vs {shape}")
    return np.stack(arrs)


def evaluate(pred_maps, gt_maps) -> MetricReport:
    """Score predicted moving-instance maps against ground truth.

    Both arguments are sequences of per-frame label maps where 0 is
    "not moving" and any other value names an instance. Instance ids
    only establish identity; relabeling either side changes nothing.

    Raises:
        ShapeMismatch: different frame counts or frame dimensions.
    """
    if len(pred_maps) != len(gt_maps):
        raise ShapeMismatch(
            f"{len(pred_maps)} predicted frames vs {len(gt_maps)} ground truth")
    pred = _stack(pred_maps)
    gt = _stack(gt_maps)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")

    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    n_p, n_g = len(pred_ids), len(gt_ids)

    if n_p == 0 and n_g == 0:
        return MetricReport(pu=1.0, ru=1.0, fu=1.0)
    if n_p == 0:
        return MetricReport(pu=1.0, ru=0.0, fu=0.0)
    if n_g == 0:
        return MetricReport(pu=0.0, ru=1.0, fu=0.0)

    p_index = {v: i for i, v in enumerate(pred_ids.tolist())}
    g_index = {v: i for i, v in enumerate(gt_ids.tolist())}
    p_sizes = np.array([(pred == v).sum() for v in pred_ids], dtype=np.int64)
    g_sizes = np.array([(gt == v).sum() for v in gt_ids], dtype=np.int64)

    both = (pred > 0) & (gt > 0)
    inter = np.zeros((n_p, n_g), dtype=np.int64)
    if both.any():
        pv = np.vectorize(p_index.get)(pred[both])
        gv = np.vectorize(g_index.get)(gt[both])
        np.add.at(inter, (pv, gv), 1)

    f = 2.0 * inter / (p_sizes[:, None] + g_sizes[None, :])
    rows, cols = linear_sum_assignment(-f)
    matches = tuple(
        (int(pred_ids[r]), int(gt_ids[c]), float(f[r, c])) for r, c in zip(rows, cols))
    total = float(f[rows, cols].sum())
    pu = total / n_p
    ru = total / n_g
    return MetricReport(pu=pu, ru=ru, fu=_f_measure(pu, ru), matches=matches)


def label_accuracy(pred_labels, gt_labels) -> float:
    """Fraction of objects correctly labeled under the best label matching.

    Cluster/group ids on either side are arbitrary; the optimal
    assignment between them is found before counting agreements.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ShapeMismatch("label vectors differ in length")
    if pred.size == 0:
        return 1.0
    pv = np.unique(pred)
    gv = np.unique(gt)
    cont = np.zeros((len(pv), len(gv)), dtype=np.int64)
    for i, p in enumerate(pv):
        for j, g in enumerate(gv):
            cont[i, j] = int(((pred == p) & (gt == g)).sum())
    rows, cols = linear_sum_assignment(-cont)
    return float(cont[rows, cols].sum()) / pred.size
