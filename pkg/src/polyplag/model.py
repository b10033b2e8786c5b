"""Random-forest pair classifier with an explicit decision threshold.

The forest's score for a pair is the mean, over trees, of the positive
fraction of the leaf the pair falls into.  A pair is labelled plagiarized
(+1) when ``score - rho > 0`` and not plagiarized (-1) otherwise.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .pairwise import PairVector, SelectionMask, apply_mask, labels_of

logger = logging.getLogger(__name__)

MODEL_FORMAT = "polyplag-model"
MODEL_VERSION = 1
DEFAULT_TREES = 150


class ModelError(ValueError):
    pass


@dataclass
class DecisionTree:
    """Flat node table.  Leaves have ``feature == -1``; inputs with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    positive: np.ndarray
    total: np.ndarray

    def __len__(self) -> int:
        return self.feature.shape[0]

    def leaf(self, x) -> int:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return node

    def predict_fraction(self, x) -> float:
        node = self.leaf(x)
        return self.positive[node] / self.total[node]

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def to_rows(self) -> list:
        return [
            [int(f), float(t), int(lo), int(hi), int(p), int(n)]
            for f, t, lo, hi, p, n in zip(self.feature, self.threshold, self.left,
                                          self.right, self.positive, self.total)
        ]

    @classmethod
    def from_rows(cls, rows) -> "DecisionTree":
        if not rows:
            raise ModelError("empty tree")
        cols = list(zip(*rows))
        tree = cls(
            feature=np.array(cols[0], dtype=np.int64),
            threshold=np.array(cols[1], dtype=np.float64),
            left=np.array(cols[2], dtype=np.int64),
            right=np.array(cols[3], dtype=np.int64),
            positive=np.array(cols[4], dtype=np.int64),
            total=np.array(cols[5], dtype=np.int64),
        )
        if np.any(tree.total <= 0) or not np.all(np.isfinite(tree.threshold)):
            raise ModelError("corrupt tree node table")
        return tree


def gini(pos, total):
    p = pos / total
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split_on(x, y, parent_gini):
    """Best threshold on one feature as ``(decrease, threshold)`` or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.shape[0]
    boundaries = np.flatnonzero(xs[1:] > xs[:-1])  # last index of each left block
    if boundaries.size == 0:
        return None
    cum = np.cumsum(ys)
    n_left = boundaries + 1.0
    pos_left = cum[boundaries].astype(np.float64)
    n_right = n - n_left
    pos_right = cum[-1] - pos_left
    child = (n_left / n) * gini(pos_left, n_left) + (n_right / n) * gini(pos_right, n_right)
    decrease = parent_gini - child
    k = int(np.argmax(decrease))
    lo, hi = xs[boundaries[k]], xs[boundaries[k] + 1]
    thr = lo + (hi - lo) / 2.0
    if not thr < hi:
        thr = lo
    return float(decrease[k]), float(thr)


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
              n_candidates: int, min_split: int = 2) -> DecisionTree:
    """Grow one unpruned tree; ``y`` holds 1 for positive and 0 for negative."""
    n_features = X.shape[1]
    feature, threshold, left, right, positive, total = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        positive.append(int(y[idx].sum()))
        total.append(int(idx.size))
        return len(feature) - 1

    stack = [(new_node(np.arange(X.shape[0])), np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        pos, tot = positive[node], total[node]
        if pos == 0 or pos == tot or tot < min_split:
            continue
        parent = gini(pos, tot)
        candidates = np.sort(rng.choice(n_features, size=n_candidates, replace=False))
        best = None
        for pool in (candidates, np.setdiff1d(np.arange(n_features), candidates)):
            for f in pool:
                found = _best_split_on(X[idx, f], y[idx], parent)
                if found is not None and (best is None or found[0] > best[0]):
                    best = (found[0], found[1], int(f))
            if best is not None:
                break  # other features are only consulted when the sample is constant
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        positive=np.array(positive, dtype=np.int64),
        total=np.array(total, dtype=np.int64),
    )


@dataclass
class PlagiarismModel:
    trees: list
    mask: SelectionMask
    rho: float = 0.5
    seed: int = 0
    basis_ref: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trees:
            raise ModelError("a model needs at least one tree")
        if not 0.0 <= self.rho <= 1.0:
            raise ModelError(f"rho must lie in [0, 1], got {self.rho}")
        n_kept = int(self.mask.kept.sum())
        for tree in self.trees:
            if np.any(tree.feature >= n_kept):
                raise ModelError("tree splits on a feature outside the selection mask")

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    @property
    def feature_names(self) -> list:
        return list(self.mask.feature_names)

    def _reduce(self, v) -> np.ndarray:
        if isinstance(v, PairVector):
            if self.mask.feature_names and v.feature_names != list(self.mask.feature_names):
                raise ModelError(f"pair features {v.feature_names} do not match model "
                                 f"features {list(self.mask.feature_names)}")
        return apply_mask(v, self.mask)

    def score(self, v) -> float:
        x = self._reduce(v)
        return float(sum(t.predict_fraction(x) for t in self.trees) / len(self.trees))

    def classify(self, v) -> int:
        return classify_score(self.score(v), self.rho)

    # ---------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": self.config,
            "seed": int(self.seed),
            "rho": float(self.rho),
            "basis_ref": self.basis_ref,
            "mask": {
                "feature_names": list(self.mask.feature_names),
                "kept": [bool(k) for k in self.mask.kept],
                "scores": [float(s) for s in self.mask.scores],
            },
            "trees": [t.to_rows() for t in self.trees],
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PlagiarismModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ModelError("not a polyplag model file")
        if doc.get("version") != MODEL_VERSION:
            raise ModelError(f"unsupported model version {doc.get('version')}")
        try:
            m = doc["mask"]
            mask = SelectionMask(m["kept"], m["scores"], tuple(m["feature_names"]))
            return cls(
                trees=[DecisionTree.from_rows(rows) for rows in doc["trees"]],
                mask=mask,
                rho=float(doc["rho"]),
                seed=int(doc["seed"]),
                basis_ref=doc["basis_ref"],
                config=doc["config"],
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc

    @classmethod
    def from_text(cls, text: str) -> "PlagiarismModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "PlagiarismModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def classify_score(score: float, rho: float) -> int:
    return 1 if score - rho > 0 else -1


def score(model: PlagiarismModel, v) -> float:
    return model.score(v)


def classify(model: PlagiarismModel, v) -> int:
    return model.classify(v)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def train_forest(data, trees: int = DEFAULT_TREES, seed: int = 0,
                 mask: SelectionMask | None = None, basis_ref: str = "",
                 workers: int = 1) -> PlagiarismModel:
    """Fit a bagged forest of Gini trees on labelled pair vectors.

    Each tree sees a bootstrap sample of the data and ceil(sqrt(n_features))
    candidate features per node; tree ``k`` draws from a generator seeded by
    ``(seed, k)``, so the forest does not depend on ``workers``.
    """
    data = list(data)
    if len(data) < 2:
        raise ModelError("need at least two training pairs")
    y = labels_of(data)
    if len(set(y.tolist())) < 2:
        # pure training data yields pure leaves; useful as a degenerate baseline
        logger.warning("training forest on single-class data (label %+d)", int(y[0]))
    if mask is None:
        mask = SelectionMask.keep_all(data[0].feature_names)
    X = np.array([apply_mask(v, mask) for v in data])
    target = (y == 1).astype(np.int64)
    n, n_features = X.shape
    n_candidates = math.ceil(math.sqrt(n_features))

    def one(k):
        rng = tree_rng(seed, k)
        boot = rng.integers(0, n, size=n)
        return grow_tree(X[boot], target[boot], rng, n_candidates)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            forest = list(pool.map(one, range(trees)))
    else:
        forest = [one(k) for k in range(trees)]
    return PlagiarismModel(forest, mask, rho=0.5, seed=seed, basis_ref=basis_ref,
                           config={"trees": trees, "candidates": n_candidates,
                                   "min_split": 2, "criterion": "gini"})


def accuracy_at(scores, labels, rho: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = np.where(scores - rho > 0, 1, -1)
    return float(np.mean(pred == labels))


def threshold_candidates(scores) -> np.ndarray:
    s = np.unique(np.asarray(scores, dtype=np.float64))
    mids = s[:-1] + (s[1:] - s[:-1]) / 2.0
    return np.unique(np.concatenate([[0.0, 1.0], mids]))


def calibrate_threshold(model: PlagiarismModel, validation) -> float:
    """Threshold maximizing accuracy on ``validation``; ties go to the smallest."""
    validation = list(validation)
    if not validation:
        raise ModelError("empty validation set")
    labels = labels_of(validation)
    return best_threshold([model.score(v) for v in validation], labels)


def best_threshold(scores, labels) -> float:
    best_rho, best_acc = 0.0, -1.0
    for rho in threshold_candidates(scores):
        acc = accuracy_at(scores, labels, rho)
        if acc > best_acc:
            best_rho, best_acc = float(rho), acc
    return best_rho
