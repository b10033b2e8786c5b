from __future__ import annotations

import itertools
import math
import resource

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyplag import align
from polyplag.align import SlopeConstraint, StepWeights


def _seq(seed, length, dim=3):
    return np.random.default_rng(seed).standard_normal((length, dim))


def _path_cost(A, B, path, weights, metric="euclidean"):
    A, B = np.atleast_2d(A.T).T, np.atleast_2d(B.T).T
    total = align.local_distance(A[0], B[0], metric)
    for (pi, pj), (i, j) in zip(path[:-1], path[1:]):
        d = align.local_distance(A[i], B[j], metric)
        step = (i - pi, j - pj)
        total += d * {(1, 1): weights.w_sub, (1, 0): weights.w_ins, (0, 1): weights.w_del}[step]
    return total


def _windows_ok(path, window, s):
    steps = [(i - pi, j - pj) for (pi, pj), (i, j) in zip(path[:-1], path[1:])]
    for k in range(len(steps) - window + 1):
        di = sum(a for a, _ in steps[k:k + window])
        dj = sum(b for _, b in steps[k:k + window])
        if di > s * dj or dj > s * di:
            return False
    return True


# ---------------------------------------------------------------- local distance


def test_local_distance_cases():
    a = np.array([1.0, 2.0, 3.0])
    assert align.local_distance(a, a) == 0.0
    assert align.local_distance(a, a, "cosine") == 0.0
    assert align.local_distance([1, 0], [0, 1], "cosine") == 1.0
    assert align.local_distance([0, 0], [0, 0], "cosine") == 0.0
    assert align.local_distance([0, 0], [1, 0], "cosine") == 1.0
    with pytest.raises(ValueError):
        align.local_distance([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        align.local_distance([1], [1], "manhattan")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 16))
def test_local_distance_oracles(seed, dim):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(dim), rng.standard_normal(dim)
    assert align.local_distance(a, b) == pytest.approx(math.sqrt(sum((a - b) ** 2)), rel=1e-12)
    cos = 1 - sum(a * b) / math.sqrt(sum(a * a) * sum(b * b))
    assert align.local_distance(a, b, "cosine") == pytest.approx(max(cos, 0.0), abs=1e-12)


# ---------------------------------------------------------------- classic dtw


def test_dtw_basic():
    A = _seq(0, 7)
    assert align.dtw(A, A).distance == 0.0
    assert align.dtw(A[:1], A[3:4]).distance == align.local_distance(A[0], A[3])
    assert align.dtw([0, 1, 2], [0, 0, 1, 1, 2]).distance == 0.0
    with pytest.raises(ValueError):
        align.dtw(np.zeros((0, 2)), A[:, :2])
    with pytest.raises(ValueError):
        align.dtw(_seq(0, 3, 2), _seq(0, 3, 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 12))
def test_dtw_symmetric_and_path(seed, m, n):
    A, B = _seq(seed, m), _seq(seed + 1, n)
    res = align.dtw(A, B, return_path=True)
    assert align.dtw(B, A).distance == res.distance
    assert align.dtw(A, B).distance == res.distance
    path = res.path
    assert path[0] == (0, 0) and path[-1] == (m - 1, n - 1)
    for (pi, pj), (i, j) in zip(path[:-1], path[1:]):
        assert (i - pi, j - pj) in {(1, 0), (0, 1), (1, 1)}
    assert _path_cost(A, B, path, align.UNIT_WEIGHTS) == pytest.approx(res.distance, rel=1e-12)


def _brute_vector_dtw(A, B, weights, slope, metric="euclidean"):
    """Enumerate every monotone path of a small vector-sequence pair."""
    m, n = len(A), len(B)
    best = math.inf
    if slope is not None and max(m, n) > slope.max_slope * min(m, n):
        return best

    def walk(path):
        nonlocal best
        i, j = path[-1]
        if (i, j) == (m - 1, n - 1):
            if slope is None or _windows_ok(path, slope.window, slope.max_slope):
                best = min(best, _path_cost(A, B, path, weights, metric))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < m and j + dj < n:
                walk(path + [(i + di, j + dj)])

    walk([(0, 0)])
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6), st.booleans(),
       st.sampled_from(["euclidean", "cosine"]))
def test_weighted_vector_oracle(seed, m, n, constrained, metric):
    A, B = _seq(seed, m), _seq(seed + 7, n)
    w = StepWeights(4.0, 1.0, 1.0)
    slope = SlopeConstraint() if constrained else None
    got = align.weighted_dtw(A, B, w, slope, metric).distance
    oracle = _brute_vector_dtw(A, B, w, slope, metric)
    if math.isinf(oracle):
        assert math.isinf(got)
    else:
        assert got == pytest.approx(oracle, rel=1e-12)


# ---------------------------------------------------------------- weighted dtw


def test_weighted_identity_and_degeneracy():
    A, B = _seq(3, 9), _seq(4, 6)
    assert align.weighted_dtw(A, A).distance == 0.0
    assert align.weighted_dtw(A, A, StepWeights(7, 2, 3), None).distance == 0.0
    assert align.weighted_dtw(A, B, align.UNIT_WEIGHTS, None).distance == align.dtw(A, B).distance


def test_infeasible_ratio_is_sentinel():
    A, B = _seq(5, 13), _seq(6, 6)
    assert math.isinf(align.weighted_dtw(A, B).distance)
    assert math.isinf(align.weighted_dtw(B, A).distance)
    assert math.isfinite(align.weighted_dtw(A[:12], B).distance)
    assert align.weighted_dtw(A, B, return_path=True).path is None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 14), st.integers(1, 14), st.booleans())
def test_weighted_symmetry_when_ins_equals_del(seed, m, n, constrained):
    A, B = _seq(seed, m), _seq(seed + 3, n)
    slope = SlopeConstraint() if constrained else None
    w = StepWeights(3.0, 1.5, 1.5)
    assert align.weighted_dtw(A, B, w, slope).distance == align.weighted_dtw(B, A, w, slope).distance
    swapped = StepWeights(3.0, 0.5, 2.0)
    assert (align.weighted_dtw(A, B, swapped, slope).distance
            == align.weighted_dtw(B, A, StepWeights(3.0, 2.0, 0.5), slope).distance)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 12),
       st.floats(0.1, 5), st.floats(0.1, 5), st.booleans())
def test_monotone_in_substitution_weight(seed, m, n, w1, w2, constrained):
    A, B = _seq(seed, m), _seq(seed + 1, n)
    lo, hi = sorted((w1, w2))
    slope = SlopeConstraint() if constrained else None
    a = align.weighted_dtw(A, B, StepWeights(lo, 1, 1), slope).distance
    b = align.weighted_dtw(A, B, StepWeights(hi, 1, 1), slope).distance
    assert a <= b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 20), st.integers(1, 20))
def test_constrained_path_respects_slope(seed, m, n):
    A, B = _seq(seed, m), _seq(seed + 2, n)
    w = StepWeights(4.0, 1.0, 1.0)
    res = align.weighted_dtw(A, B, w, SlopeConstraint(), return_path=True)
    fast = align.weighted_dtw(A, B, w, SlopeConstraint())
    if math.isinf(fast.distance):
        assert max(m, n) > 2 * min(m, n) and res.path is None
        return
    assert res.distance == fast.distance
    path = res.path
    assert path[0] == (0, 0) and path[-1] == (m - 1, n - 1)
    assert _windows_ok(path, 5, 2.0)
    assert _path_cost(A, B, path, w) == pytest.approx(res.distance, rel=1e-12)


def test_constraint_blocks_cheap_axis_runs():
    # unconstrained, cheap ins/del steps hug the axes; the constraint forbids that
    A = np.arange(10.0)
    B = np.arange(10.0)[::-1].copy()
    w = StepWeights(4.0, 1.0, 1.0)
    free = align.weighted_dtw(A, B, w, None, return_path=True)
    tied = align.weighted_dtw(A, B, w, SlopeConstraint(), return_path=True)
    assert not _windows_ok(free.path, 5, 2.0)
    assert _windows_ok(tied.path, 5, 2.0)
    assert tied.distance >= free.distance


def test_history_tables():
    histories, nxt, allowed = align.history_tables(5, 2.0)
    assert len(histories) == 1 + 3 + 9 + 27 + 81
    deltas = align.STEP_DELTAS
    for k, h in enumerate(histories):
        for step in range(3):
            run = h + (step,)
            di = sum(deltas[s][0] for s in run)
            dj = sum(deltas[s][1] for s in run)
            expect = len(run) < 5 or (di <= 2 * dj and dj <= 2 * di)
            assert bool(allowed[k, step]) == expect
            assert histories[nxt[k, step]] == run[-4:]


def test_slope_config_validation():
    with pytest.raises(ValueError):
        SlopeConstraint(window=1)
    with pytest.raises(ValueError):
        SlopeConstraint(max_slope=1.0)
    with pytest.raises(ValueError):
        StepWeights(0.0, 1.0, 1.0)


def test_distance_only_memory_is_linear():
    # a full cost table with step histories would need about 2.9 GB here
    A, B = _seq(8, 2000, 2), _seq(9, 1500, 2)
    before = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    dist = align.weighted_dtw(A, B).distance
    grown_mb = (resource.getrusage(resource.RUSAGE_SELF).ru_maxrss - before) / 1024
    assert math.isfinite(dist)
    assert grown_mb < 200


# ---------------------------------------------------------------- normalization


def test_normalize_distance():
    assert align.normalize_distance(align.AlignmentResult(10.0), 5, 5) == 1.0
    assert align.normalize_distance(align.AlignmentResult(0.0), 3, 4) == 0.0
    assert math.isinf(align.normalize_distance(align.AlignmentResult(math.inf), 3, 4))
    for d, m, n in itertools.product([0.5, 7.25, 123.0], [1, 4], [2, 9]):
        assert align.normalize_distance(d, m, n) == d / (m + n)
