"""Pair characterization: one alignment distance per feature class.

A pair of tracks becomes a fixed-order vector of DTW distances, one per
registered feature class.  F-score ranking on labelled training pairs then
decides which positions the classifier sees.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import align
from .descriptors import FeatureBundle, f_score

REGISTERED_CLASSES = ("timbral", "mfcc", "key", "novelty", "nmf")
TRADITIONAL_CLASSES = ("timbral", "mfcc", "key", "novelty")
NMF_CLASSES = ("nmf",)

DISTANCE_CAP = 1e9


@dataclass(frozen=True)
class ClassAlignment:
    """How one feature class is aligned: plain or rhythm-weighted DTW, and the local metric."""

    weighted: bool = False
    metric: str = "euclidean"


DEFAULT_CLASS_ALIGNMENT = {
    "timbral": ClassAlignment(False, "euclidean"),
    "mfcc": ClassAlignment(False, "euclidean"),
    "key": ClassAlignment(False, "cosine"),
    "novelty": ClassAlignment(True, "euclidean"),
    "nmf": ClassAlignment(False, "cosine"),
}


@dataclass(frozen=True)
class AlignmentConfig:
    classes: tuple = REGISTERED_CLASSES
    per_class: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_ALIGNMENT))
    weights: align.StepWeights = align.StepWeights()
    slope: align.SlopeConstraint | None = align.SlopeConstraint()
    normalize: bool = True
    cap: float = DISTANCE_CAP

    def for_class(self, name: str) -> ClassAlignment:
        return self.per_class.get(name, ClassAlignment())


@dataclass
class PairVector:
    pair_id: str
    distances: dict
    label: int | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label!r}")

    @property
    def feature_names(self) -> list:
        return list(self.distances)

    def as_array(self) -> np.ndarray:
        return np.array(list(self.distances.values()), dtype=np.float64)


@dataclass
class SelectionMask:
    kept: np.ndarray
    scores: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=bool)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not self.kept.any():
            raise ValueError("selection mask must keep at least one feature")
        if self.scores.shape != self.kept.shape:
            raise ValueError("scores and mask differ in length")

    def __len__(self) -> int:
        return self.kept.shape[0]

    @property
    def kept_names(self) -> list:
        return [n for n, k in zip(self.feature_names, self.kept) if k]

    @classmethod
    def keep_all(cls, names) -> "SelectionMask":
        n = len(names)
        return cls(np.ones(n, bool), np.zeros(n), tuple(names))


def class_distance(seq_a, seq_b, how: ClassAlignment, config: AlignmentConfig) -> float:
    """Alignment distance of one feature class, normalized and capped per config."""
    if how.weighted:
        res = align.weighted_dtw(seq_a, seq_b, config.weights, config.slope, how.metric)
    else:
        res = align.dtw(seq_a, seq_b, how.metric)
    m, n = len(seq_a), len(seq_b)
    dist = align.normalize_distance(res, m, n) if config.normalize else res.distance
    return min(dist, config.cap)


def pair_distance_vector(bundle_a: FeatureBundle, bundle_b: FeatureBundle,
                         config: AlignmentConfig | None = None,
                         pair_id: str = "", label: int | None = None) -> PairVector:
    config = config or AlignmentConfig()
    distances = {}
    for name in config.classes:
        if name not in bundle_a or name not in bundle_b:
            raise KeyError(f"feature class {name!r} missing from a bundle of pair {pair_id!r}")
        distances[name] = class_distance(bundle_a[name], bundle_b[name],
                                         config.for_class(name), config)
    return PairVector(pair_id, distances, label)


def _matrix(vectors) -> tuple:
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no pair vectors")
    names = vectors[0].feature_names
    for v in vectors:
        if v.feature_names != names:
            raise ValueError(f"pair {v.pair_id!r} has features {v.feature_names}, expected {names}")
    X = np.array([v.as_array() for v in vectors])
    return X, names


def labels_of(vectors) -> np.ndarray:
    y = np.array([v.label for v in vectors])
    if any(lbl is None for lbl in y):
        raise ValueError("unlabelled pair vector in training data")
    return y.astype(int)


def select_features(training, keep_fraction: float = 0.75) -> SelectionMask:
    """Keep the ceil(keep_fraction * n) features with the highest F-scores.

    Ties go to the lower feature index.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    training = list(training)
    X, names = _matrix(training)
    y = labels_of(training)
    if len(set(y.tolist())) < 2:
        raise ValueError("feature selection needs both classes in the training set")
    scores = np.array([f_score(X[:, k], y) for k in range(X.shape[1])])
    n_keep = math.ceil(keep_fraction * len(names))
    order = sorted(range(len(names)), key=lambda k: (-scores[k], k))
    kept = np.zeros(len(names), dtype=bool)
    kept[order[:n_keep]] = True
    return SelectionMask(kept, scores, tuple(names))


def apply_mask(v, mask: SelectionMask) -> np.ndarray:
    x = v.as_array() if isinstance(v, PairVector) else np.asarray(v, dtype=np.float64)
    if x.shape[-1] != len(mask):
        raise ValueError(f"vector has {x.shape[-1]} features, mask {len(mask)}")
    return x[..., mask.kept]


def restrict(vectors, classes) -> list:
    """Copies of the vectors holding only the named classes, in the given order."""
    return [PairVector(v.pair_id, {c: v.distances[c] for c in classes}, v.label)
            for v in vectors]


# ---------------------------------------------------------------- table I/O


def _format_label(label) -> str:
    if label is None:
        return ""
    return "+1" if label == 1 else "-1"


def _parse_label(text: str, where: str):
    text = text.strip()
    if text == "":
        return None
    if text in ("+1", "1"):
        return 1
    if text == "-1":
        return -1
    raise ValueError(f"{where}: bad label {text!r}")


def write_pair_table(vectors, path) -> None:
    """Tab-separated table: pair_id, one column per feature, label.

    Floats are written with ``repr`` so that reading back is lossless.
    """
    vectors = list(vectors)
    names = vectors[0].feature_names if vectors else list(REGISTERED_CLASSES)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["pair_id", *names, "label"])
        for v in vectors:
            if v.feature_names != names:
                raise ValueError(f"pair {v.pair_id!r} has mismatched feature names")
            writer.writerow([v.pair_id, *(repr(float(x)) for x in v.distances.values()),
                             _format_label(v.label)])
    os.replace(tmp, path)


def read_pair_table(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows:
        raise ValueError(f"{path}: empty pair table")
    header = rows[0]
    if len(header) < 3 or header[0] != "pair_id" or header[-1] != "label":
        raise ValueError(f"{path}: header must be pair_id, <features...>, label")
    names = header[1:-1]
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        values = [float(x) for x in row[1:-1]]
        out.append(PairVector(row[0], dict(zip(names, values)),
                              _parse_label(row[-1], f"{path}:{lineno}")))
    return out
