"""Dynamic time warping distances between feature sequences.

Two recurrences are provided.  ``dtw`` is the classic unweighted one.
``weighted_dtw`` charges each step type its own multiple of the local
distance, which lets insertions and deletions (tempo changes) cost less than
substitutions, and optionally bounds the local slope of the warping path so
that cheap axis-parallel moves cannot dominate.

Slope constraint
----------------
A warping path is a sequence of steps: diagonal (1, 1), vertical (1, 0) or
horizontal (0, 1).  With ``window = w`` and ``max_slope = s`` a path is
feasible when every run of ``w`` consecutive steps advances ``di`` rows and
``dj`` columns with ``di <= s * dj`` and ``dj <= s * di``, and the sequence
lengths satisfy ``max(m, n) <= s * min(m, n)``.  The dynamic program tracks the
last ``w - 1`` steps of every partial path, so the result is the exact optimum
over feasible paths.  Infeasible problems return ``inf``.

Distance-only calls keep two rows of the cost table, indexed by the shorter
sequence (times the number of step histories when constrained).  Paths are
recovered from a full table and are meant for short sequences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

METRICS = {"euclidean": 0, "cosine": 1}

DIAG, VERT, HORZ = 0, 1, 2
STEP_DELTAS = ((1, 1), (1, 0), (0, 1))


@dataclass(frozen=True)
class StepWeights:
    """Multipliers of the local distance for each step type.

    ``w_ins`` applies to vertical steps (advance the first sequence only),
    ``w_del`` to horizontal ones (advance the second only).
    """

    w_sub: float = 4.0
    w_ins: float = 1.0
    w_del: float = 1.0

    def __post_init__(self):
        if min(self.w_sub, self.w_ins, self.w_del) <= 0:
            raise ValueError("step weights must be positive")


UNIT_WEIGHTS = StepWeights(1.0, 1.0, 1.0)


@dataclass(frozen=True)
class SlopeConstraint:
    window: int = 5
    max_slope: float = 2.0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("slope window must be at least 2 steps")
        if not self.max_slope > 1:
            raise ValueError("max_slope must exceed 1")


@dataclass
class AlignmentResult:
    distance: float
    path: list | None = None
    normalized: bool = False


# ---------------------------------------------------------------- kernels

_jit = dict(nogil=True, cache=True)


@nb.njit(**_jit)
def _local(a, b, metric):
    if metric == 0:
        acc = 0.0
        for k in range(a.shape[0]):
            diff = a[k] - b[k]
            acc += diff * diff
        return math.sqrt(acc)
    dot = 0.0
    na = 0.0
    nb_ = 0.0
    for k in range(a.shape[0]):
        dot += a[k] * b[k]
        na += a[k] * a[k]
        nb_ += b[k] * b[k]
    if na == 0.0 and nb_ == 0.0:
        return 0.0
    if na == 0.0 or nb_ == 0.0:
        return 1.0
    d = 1.0 - dot / math.sqrt(na * nb_)
    return d if d > 0.0 else 0.0


@nb.njit(**_jit)
def _weighted_rows(X, Y, w_sub, w_ins, w_del, metric):
    # X indexes rows (vertical steps), Y columns (horizontal steps).
    m = X.shape[0]
    n = Y.shape[0]
    inf = np.inf
    prev = np.full(n, inf)
    cur = np.full(n, inf)
    for i in range(m):
        for j in range(n):
            d = _local(X[i], Y[j], metric)
            if i == 0 and j == 0:
                cur[j] = d
                continue
            best = inf
            if i > 0 and j > 0:
                c = prev[j - 1] + w_sub * d
                if c < best:
                    best = c
            if j > 0:
                c = cur[j - 1] + w_del * d
                if c < best:
                    best = c
            if i > 0:
                c = prev[j] + w_ins * d
                if c < best:
                    best = c
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[n - 1]


@nb.njit(**_jit)
def _weighted_full(X, Y, w_sub, w_ins, w_del, metric):
    m = X.shape[0]
    n = Y.shape[0]
    D = np.full((m, n), np.inf)
    C = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            d = _local(X[i], Y[j], metric)
            C[i, j] = d
            if i == 0 and j == 0:
                D[i, j] = d
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = min(best, D[i - 1, j - 1] + w_sub * d)
            if j > 0:
                best = min(best, D[i, j - 1] + w_del * d)
            if i > 0:
                best = min(best, D[i - 1, j] + w_ins * d)
            D[i, j] = best
    return D, C


@nb.njit(**_jit)
def _constrained_cell(src, dst, nxt, allowed, step, cost):
    for p in range(src.shape[0]):
        v = src[p]
        if v < np.inf and allowed[p, step]:
            q = nxt[p, step]
            c = v + cost
            if c < dst[q]:
                dst[q] = c


@nb.njit(**_jit)
def _constrained_rows(X, Y, w_sub, w_ins, w_del, metric, nxt, allowed):
    m = X.shape[0]
    n = Y.shape[0]
    S = nxt.shape[0]
    prev = np.full((n, S), np.inf)
    cur = np.full((n, S), np.inf)
    for i in range(m):
        for j in range(n):
            row = cur[j]
            row[:] = np.inf
            d = _local(X[i], Y[j], metric)
            if i == 0 and j == 0:
                row[0] = d
                continue
            if i > 0 and j > 0:
                _constrained_cell(prev[j - 1], row, nxt, allowed, 0, w_sub * d)
            if i > 0:
                _constrained_cell(prev[j], row, nxt, allowed, 1, w_ins * d)
            if j > 0:
                _constrained_cell(cur[j - 1], row, nxt, allowed, 2, w_del * d)
        tmp = prev
        prev = cur
        cur = tmp
    return prev[n - 1].min()


@nb.njit(**_jit)
def _constrained_full(X, Y, w_sub, w_ins, w_del, metric, nxt, allowed):
    m = X.shape[0]
    n = Y.shape[0]
    S = nxt.shape[0]
    D = np.full((m, n, S), np.inf)
    C = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            d = _local(X[i], Y[j], metric)
            C[i, j] = d
            if i == 0 and j == 0:
                D[0, 0, 0] = d
                continue
            if i > 0 and j > 0:
                _constrained_cell(D[i - 1, j - 1], D[i, j], nxt, allowed, 0, w_sub * d)
            if i > 0:
                _constrained_cell(D[i - 1, j], D[i, j], nxt, allowed, 1, w_ins * d)
            if j > 0:
                _constrained_cell(D[i, j - 1], D[i, j], nxt, allowed, 2, w_del * d)
    return D, C


# ---------------------------------------------------------------- tables


def window_ok(steps, max_slope: float) -> bool:
    di = sum(STEP_DELTAS[s][0] for s in steps)
    dj = sum(STEP_DELTAS[s][1] for s in steps)
    return di <= max_slope * dj and dj <= max_slope * di


@lru_cache(maxsize=16)
def history_tables(window: int, max_slope: float):
    """Transition tables over the last ``window - 1`` steps of a path.

    Returns ``(histories, next_state, allowed)``; state 0 is the empty history.
    """
    depth = window - 1
    histories = [()]
    for length in range(1, depth + 1):
        histories.extend(itertools.product(range(3), repeat=length))
    index = {h: k for k, h in enumerate(histories)}
    nxt = np.zeros((len(histories), 3), dtype=np.int64)
    allowed = np.zeros((len(histories), 3), dtype=np.bool_)
    for k, h in enumerate(histories):
        for step in range(3):
            extended = h + (step,)
            allowed[k, step] = len(h) < depth or window_ok(extended, max_slope)
            nxt[k, step] = index[extended[-depth:]]
    return histories, nxt, allowed


# ---------------------------------------------------------------- public API


def _as_sequence(A) -> np.ndarray:
    X = np.asarray(A, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("sequence must be 1-D or 2-D (frames, dim)")
    if X.shape[0] == 0:
        raise ValueError("cannot align an empty sequence")
    if not X.flags.c_contiguous:
        X = np.ascontiguousarray(X)
    return X


def _metric_code(metric: str) -> int:
    try:
        return METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}") from None


def local_distance(a, b, metric: str = "euclidean") -> float:
    """Euclidean distance or cosine distance (1 - cosine similarity).

    Under the cosine metric two zero vectors are at distance 0 and a zero
    vector is at distance 1 from anything else.
    """
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(_local(a, b, _metric_code(metric)))


def _slope_feasible(m: int, n: int, slope: SlopeConstraint) -> bool:
    return max(m, n) <= slope.max_slope * min(m, n)


def _backtrack_plain(D, C, w_sub, w_ins, w_del):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        d = C[i, j]
        target = D[i, j]
        if i > 0 and j > 0 and D[i - 1, j - 1] + w_sub * d == target:
            i, j = i - 1, j - 1
        elif j > 0 and D[i, j - 1] + w_del * d == target:
            j -= 1
        else:
            i -= 1
        path.append((i, j))
    return path[::-1]


def _backtrack_constrained(D, C, w_sub, w_ins, w_del, nxt, allowed):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    state = int(np.argmin(D[i, j]))
    path = [(i, j)]
    costs = (w_sub, w_ins, w_del)
    while (i, j) != (0, 0):
        d = C[i, j]
        target = D[i, j, state]
        found = False
        for step in (DIAG, HORZ, VERT):
            di, dj = STEP_DELTAS[step]
            pi, pj = i - di, j - dj
            if pi < 0 or pj < 0:
                continue
            for p in np.flatnonzero((nxt[:, step] == state) & allowed[:, step]):
                if D[pi, pj, p] + costs[step] * d == target:
                    i, j, state = pi, pj, int(p)
                    found = True
                    break
            if found:
                break
        if not found:  # pragma: no cover - table and backtrack disagree
            raise RuntimeError("failed to recover warping path")
        path.append((i, j))
    return path[::-1]


def weighted_dtw(A, B, weights: StepWeights = StepWeights(),
                 slope: SlopeConstraint | None = SlopeConstraint(),
                 metric: str = "euclidean", return_path: bool = False) -> AlignmentResult:
    """DTW with per-step weights and an optional local slope bound.

    ``D(i, j) = min(D(i-1, j-1) + w_sub d, D(i, j-1) + w_del d, D(i-1, j) + w_ins d)``
    with ``D(0, 0) = d(0, 0)``.  Pass ``slope=None`` to disable the constraint.
    """
    X = _as_sequence(A)
    Y = _as_sequence(B)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    code = _metric_code(metric)
    w_sub, w_ins, w_del = float(weights.w_sub), float(weights.w_ins), float(weights.w_del)
    m, n = X.shape[0], Y.shape[0]

    if slope is not None:
        if not _slope_feasible(m, n, slope):
            return AlignmentResult(math.inf, None)
        _, nxt, allowed = history_tables(slope.window, float(slope.max_slope))

    if return_path:
        if slope is None:
            D, C = _weighted_full(X, Y, w_sub, w_ins, w_del, code)
            dist = float(D[-1, -1])
            path = _backtrack_plain(D, C, w_sub, w_ins, w_del)
        else:
            D, C = _constrained_full(X, Y, w_sub, w_ins, w_del, code, nxt, allowed)
            dist = float(D[-1, -1].min())
            path = None if math.isinf(dist) else _backtrack_constrained(
                D, C, w_sub, w_ins, w_del, nxt, allowed)
        return AlignmentResult(dist, path)

    # keep the shorter sequence on the inner axis; transposing swaps ins/del
    if n > m:
        X, Y = Y, X
        w_ins, w_del = w_del, w_ins
    if slope is None:
        dist = _weighted_rows(X, Y, w_sub, w_ins, w_del, code)
    else:
        dist = _constrained_rows(X, Y, w_sub, w_ins, w_del, code, nxt, allowed)
    return AlignmentResult(float(dist))


def dtw(A, B, metric: str = "euclidean", return_path: bool = False) -> AlignmentResult:
    """Classic DTW: ``D(i, j) = min(D(i-1, j-1), D(i, j-1), D(i-1, j)) + d(i, j)``."""
    return weighted_dtw(A, B, UNIT_WEIGHTS, None, metric, return_path)


def normalize_distance(result, m: int, n: int) -> float:
    """Divide an alignment cost by ``m + n``; ``inf`` passes through."""
    dist = result.distance if isinstance(result, AlignmentResult) else float(result)
    if math.isinf(dist):
        return math.inf
    return dist / (m + n)
