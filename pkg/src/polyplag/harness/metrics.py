"""Evaluation of a thresholded pair classifier."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import PlagiarismModel
from ..pairwise import labels_of


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    auc: float
    pr_curve: list
    tp: int
    fp: int
    tn: int
    fn: int
    rho: float = 0.5
    per_genre: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def confusion(scores, labels, rho: float):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores - rho > 0
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def pr_curve(scores, labels) -> list:
    """(recall, precision) points, sweeping ``score >= t`` over every distinct score.

    The curve starts at (0, 1) and visits thresholds from high to low.
    Precision with no predicted positives counts as 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == 1
    n_pos = int(pos.sum())
    points = [(0.0, 1.0)]
    for t in np.unique(scores)[::-1]:
        pred = scores >= t
        tp = int(np.sum(pred & pos))
        points.append((_ratio(tp, n_pos), _ratio(tp, int(pred.sum()))))
    return points


def trapezoid_auc(points) -> float:
    area = 0.0
    for (r0, p0), (r1, p1) in zip(points[:-1], points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def report_from_scores(scores, labels, rho: float, genres=None) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("nothing to evaluate")
    tp, fp, tn, fn = confusion(scores, labels, rho)
    curve = pr_curve(scores, labels)
    per_genre = {}
    if genres is not None and any(genres):
        groups = defaultdict(list)
        for k, g in enumerate(genres):
            groups[g or "unknown"].append(k)
        for g, idx in sorted(groups.items()):
            gtp, gfp, gtn, gfn = confusion(scores[idx], labels[idx], rho)
            per_genre[g] = (gtp + gtn) / len(idx)
    return EvalReport(
        accuracy=(tp + tn) / scores.size,
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        auc=trapezoid_auc(curve),
        pr_curve=[list(p) for p in curve],
        tp=tp, fp=fp, tn=tn, fn=fn, rho=float(rho), per_genre=per_genre,
    )


def evaluate(model: PlagiarismModel, pairs, genres=None) -> EvalReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("nothing to evaluate")
    scores = [model.score(v) for v in pairs]
    return report_from_scores(scores, labels_of(pairs), model.rho, genres)
