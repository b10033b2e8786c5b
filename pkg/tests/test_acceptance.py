"""End-to-end acceptance checks, one test per numbered criterion.

Every test prints a PASS/FAIL line and then asserts the same verdict, so a
failing criterion fails the run.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
import time
import zlib

import numpy as np
import pytest

from polyplag import align, descriptors as D, model as M, nmf, pairwise
from polyplag.align import SlopeConstraint, StepWeights
from polyplag.descriptors import FeatureBundle
from polyplag.harness import cache, metrics, pipeline, synth
from polyplag.harness.config import PipelineConfig
from polyplag.pairwise import PairVector

# ---------------------------------------------------------------- 1-3: nmf


def _random_case(rng, max_dim=64, max_frames=200, n_bases=64):
    dim = int(rng.integers(1, max_dim + 1))
    frames = int(rng.integers(1, max_frames + 1))
    M_ = rng.uniform(0, 1, (dim, frames)) * (rng.uniform(0, 1, (dim, frames)) > 0.2)
    corpus = [rng.uniform(0, 1, (dim, 40)) for _ in range(2)]
    B = nmf.draw_exemplar_bases(corpus, n_bases, seed=int(rng.integers(1 << 30))).columns
    return M_, B


def test_criterion_01_kl_monotone(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, trajectories_match = -math.inf, True
    violations = {}  # first rise per instance: divergence after it, relative to sum(M)
    for k in range(100):
        M_, B = _random_case(rng)
        W = np.ones((B.shape[1], M_.shape[1]))
        prev = nmf.generalized_kl(M_, B @ W)
        for _ in range(200):
            W = nmf.kl_update(M_, B, W)
            cur = nmf.generalized_kl(M_, B @ W)
            if prev > 0:
                rise = (cur - prev) / prev
                worst = max(worst, rise)
                if rise > 1e-9:
                    violations.setdefault(k, cur / M_.sum())
            prev = cur
        if k % 10 == 0:
            ref = nmf.infer_weights(M_, B, max_iter=200, rel_tol=0.0)
            trajectories_match &= bool(np.array_equal(ref.values, W))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60 and trajectories_match
    where = ", ".join(f"#{k} at KL/sum(M) {r:.1e}" for k, r in list(violations.items())[:3])
    criterion(1, ok, f"KL non-increasing on 100 matrices, worst relative rise {worst:.2e}, "
                     f"{len(violations)} instances rise{' (' + where + ')' if where else ''}, "
                     f"{elapsed:.1f} s")
    assert ok


def test_criterion_02_planted_reconstruction(criterion):
    rng = np.random.default_rng(202)
    shapes = [(int(d), int(n)) for d, n in zip(np.linspace(8, 64, 50), np.linspace(4, 32, 50))]
    ratios = []
    for dim, n in shapes:
        B = rng.uniform(0, 1, (dim, n))
        W_true = rng.uniform(0, 1, (n, 50))
        M_ = B @ W_true
        W = nmf.infer_weights(M_, B, max_iter=200, rel_tol=0.0).values
        ratios.append(nmf.generalized_kl(M_, B @ W) / M_.sum())
    ratios = np.array(ratios)
    passed = int(np.sum(ratios <= 1e-6))
    ok = passed == len(ratios)
    criterion(2, ok, f"{passed}/50 planted instances reach KL <= 1e-6 sum(M) in 200 iterations "
                     f"(median ratio {np.median(ratios):.1e}, max {ratios.max():.1e})")
    assert ok


def test_criterion_03_scale_equivariance(criterion):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(20):
        M_, B = _random_case(rng, max_frames=100)
        base = nmf.infer_weights(M_, B).values
        for c in (0.5, 3.0):
            scaled = nmf.infer_weights(c * M_, B).values
            expect = c * base
            denom = np.where(expect > 0, np.abs(expect), 1.0)
            worst = max(worst, float(np.max(np.abs(scaled - expect) / denom)))
    ok = worst <= 1e-6
    criterion(3, ok, f"infer_weights(cM) = c infer_weights(M), worst relative error {worst:.2e}")
    assert ok


# ---------------------------------------------------------------- 4-5: alignment


_STEPS = {(1, 1): 0, (1, 0): 1, (0, 1): 2}


def _all_paths(m, n):
    out = []

    def walk(i, j, cells, steps):
        if (i, j) == (m - 1, n - 1):
            out.append((list(cells), list(steps)))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < m and j + dj < n:
                cells.append((i + di, j + dj))
                steps.append((di, dj))
                walk(i + di, j + dj, cells, steps)
                cells.pop()
                steps.pop()

    walk(0, 0, [(0, 0)], [])
    return out


def _slope_ok(steps, window=5, s=2.0):
    for k in range(len(steps) - window + 1):
        di = sum(a for a, _ in steps[k:k + window])
        dj = sum(b for _, b in steps[k:k + window])
        if di > s * dj or dj > s * di:
            return False
    return True


def _path_matrices(m, n):
    """Per-path cell weights for the unit and (4, 1, 1) costs, plus the constrained subset."""
    paths = _all_paths(m, n)
    unit = np.zeros((len(paths), m * n))
    weighted = np.zeros((len(paths), m * n))
    feasible = np.zeros(len(paths), dtype=bool)
    step_weight = {(1, 1): 4.0, (1, 0): 1.0, (0, 1): 1.0}
    for p, (cells, steps) in enumerate(paths):
        unit[p, 0] = weighted[p, 0] = 1.0
        for (i, j), st in zip(cells[1:], steps):
            unit[p, i * n + j] += 1.0
            weighted[p, i * n + j] += step_weight[st]
        feasible[p] = max(m, n) <= 2 * min(m, n) and _slope_ok(steps)
    return unit, weighted, weighted[feasible]


def _exhaustive_costs(m, n, P):
    """Minimum path cost for every sequence pair of lengths m and n, shape (3^m, 3^n)."""
    A = np.array(list(itertools.product(range(3), repeat=m)), dtype=np.float64)
    B = np.array(list(itertools.product(range(3), repeat=n)), dtype=np.float64)
    if P.shape[0] == 0:
        return np.full((len(A), len(B)), math.inf), A, B
    best = np.empty((len(A), len(B)))
    for lo in range(0, len(A), 27):
        chunk = A[lo:lo + 27]
        local = np.abs(chunk[:, None, :, None] - B[None, :, None, :]).reshape(len(chunk), len(B), m * n)
        # integer-valued costs below 2**53, so BLAS sums are exact
        best[lo:lo + 27] = (local @ P.T).min(axis=-1)
    return best, A, B


def test_criterion_04_exhaustive_dtw(criterion):
    start = time.perf_counter()
    w411 = StepWeights(4.0, 1.0, 1.0)
    mismatches, pairs = 0, 0
    for m, n in itertools.product(range(1, 7), repeat=2):
        unit, weighted, constrained = _path_matrices(m, n)
        classic, A, B = _exhaustive_costs(m, n, unit)
        free, _, _ = _exhaustive_costs(m, n, weighted)
        tied, _, _ = _exhaustive_costs(m, n, constrained)
        for a, seq_a in enumerate(A):
            for b, seq_b in enumerate(B):
                pairs += 1
                got = (align.dtw(seq_a, seq_b).distance,
                       align.weighted_dtw(seq_a, seq_b, w411, None).distance,
                       align.weighted_dtw(seq_a, seq_b, w411, SlopeConstraint()).distance)
                if got != (classic[a, b], free[a, b], tied[a, b]):
                    mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 120
    criterion(4, ok, f"{pairs} sequence pairs x 3 variants match path enumeration exactly, "
                     f"{mismatches} mismatches, {elapsed:.1f} s")
    assert ok


def test_criterion_05_weighted_degeneracy(criterion):
    rng = np.random.default_rng(505)
    unequal = 0
    for _ in range(1000):
        dim = int(rng.integers(1, 8))
        A = rng.standard_normal((int(rng.integers(1, 40)), dim))
        B = rng.standard_normal((int(rng.integers(1, 40)), dim))
        if align.weighted_dtw(A, B, align.UNIT_WEIGHTS, None).distance != align.dtw(A, B).distance:
            unequal += 1
    ok = unequal == 0
    criterion(5, ok, f"unit-weight unconstrained weighted_dtw equals dtw on 1000 pairs, "
                     f"{unequal} differ")
    assert ok


# ---------------------------------------------------------------- 6: descriptors


def test_criterion_06_descriptor_closed_forms(criterion):
    t = np.arange(16000) / 16000.0
    sine = np.sin(2 * np.pi * 1000.0 * t + 0.3)
    zcr = D.zero_crossing_rate(sine[:640])
    pair = np.zeros(1024)
    pair[[100, 700]] = 2.5
    entropy = D.spectral_entropy(pair)
    rolloff = D.spectral_rolloff(np.ones(1024), 0.85)
    rng = np.random.default_rng(606)
    rotations_exact = True
    for _ in range(50):
        c = rng.uniform(0, 1, 12)
        scores = D.key_strength(c)
        for k in range(12):
            rot = D.key_strength(np.roll(c, k))
            rotations_exact &= bool(np.array_equal(rot[:12], np.roll(scores[:12], k))
                                    and np.array_equal(rot[12:], np.roll(scores[12:], k)))
    ok = abs(zcr - 0.125) <= 0.002 and entropy == 0.1 and rolloff == 870 and rotations_exact
    criterion(6, ok, f"zcr {zcr:.4f}, two-bin entropy {entropy!r}, rolloff bin {rolloff}, "
                     f"key rotation exact: {rotations_exact}")
    assert ok


# ---------------------------------------------------------------- 7: forest


def _separable(seed, n=200, d=5):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    X = rng.standard_normal((n, d))
    X[:, 0] = np.where(y == 1, 1.0, -1.0) + 0.3 * rng.standard_normal(n)
    names = [f"f{k}" for k in range(d)]
    return [PairVector(f"p{i}", dict(zip(names, row)), int(lbl)) for i, (row, lbl) in enumerate(zip(X, y))]


def test_criterion_07_forest(criterion, tmp_path):
    data = _separable(707)
    first = M.train_forest(data, trees=150, seed=3)
    second = M.train_forest(data, trees=150, seed=3)
    first.save(tmp_path / "a.json")
    second.save(tmp_path / "b.json")
    identical = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    acc = float(np.mean([first.classify(v) == v.label for v in data]))
    rng = np.random.default_rng(77)
    monotone = True
    for _ in range(100):
        scores = rng.uniform(0, 1, int(rng.integers(1, 50)))
        rhos = np.sort(np.concatenate([rng.uniform(0, 1, 10), [0.0, 1.0]]))
        sets = [{k for k, s in enumerate(scores) if M.classify_score(s, r) == 1} for r in rhos]
        monotone &= all(b <= a for a, b in zip(sets, sets[1:]))
    ok = identical and acc >= 0.99 and monotone
    criterion(7, ok, f"byte-identical model: {identical}, separable training accuracy {acc:.3f}, "
                     f"threshold monotone on 100 sets: {monotone}")
    assert ok


# ---------------------------------------------------------------- 8: synthetic study


def test_criterion_08_synthetic_study(criterion, tmp_path):
    start = time.perf_counter()
    manifest = synth.generate_synthetic_pairs(tmp_path / "corpus", synth.SynthConfig(n_pos=60, n_neg=60))
    result = pipeline.run_study(manifest, PipelineConfig())
    elapsed = time.perf_counter() - start
    acc = {name: rep.accuracy for name, rep in result.reports.items()}
    ok = (acc["combined"] >= 0.85 and acc["combined"] >= acc["traditional"]
          and acc["combined"] >= acc["nmf"] and elapsed < 600)
    criterion(8, ok, f"test accuracy traditional {acc['traditional']:.3f}, nmf {acc['nmf']:.3f}, "
                     f"combined {acc['combined']:.3f} on {len(result.test_ids)} pairs, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 9: evaluation


def _brute_metrics(scores, labels, rho):
    tp = fp = tn = fn = 0
    for s, l in zip(scores, labels):
        pred = 1 if s - rho > 0 else -1
        if pred == 1:
            tp, fp = (tp + 1, fp) if l == 1 else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if l == 1 else (fn, tn + 1)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    n_pos = labels.count(1)
    curve = [(0.0, 1.0)]
    for t in sorted(set(scores), reverse=True):
        chosen = [l for s, l in zip(scores, labels) if s >= t]
        hits = chosen.count(1)
        curve.append((hits / n_pos if n_pos else 0.0, hits / len(chosen)))
    auc = 0.0
    for (r0, p0), (r1, p1) in zip(curve, curve[1:]):
        auc += (r1 - r0) * (p0 + p1) / 2
    return (tp + tn) / len(scores), precision, recall, auc


def test_criterion_09_evaluation_oracle(criterion):
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 4))).tolist()
        labels = rng.choice([1, -1], n).tolist()
        rho = float(rng.uniform(0, 1))
        rep = metrics.report_from_scores(scores, labels, rho)
        expect = _brute_metrics(scores, labels, rho)
        got = (rep.accuracy, rep.precision, rep.recall, rep.auc)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, expect)))
    ok = worst <= 1e-12
    criterion(9, ok, f"metrics match brute-force oracles on 100 sets, worst error {worst:.1e}")
    assert ok


# ---------------------------------------------------------------- 10: formats


def _basis_golden(tmp_path):
    rng = np.random.default_rng(10)
    basis = nmf.draw_exemplar_bases([rng.uniform(0, 1, (16, 30))], 6, seed=42)
    path = tmp_path / "bases.bin"
    nmf.save_basis(basis, path)
    blob = path.read_bytes()
    nmf.save_basis(nmf.load_basis(path), tmp_path / "again.bin")
    magic, version, n, dim, seed, digest = struct.unpack_from("<8sIIIq64s", blob)
    return ((tmp_path / "again.bin").read_bytes() == blob and magic == b"PLGBASIS" and version == 1
            and (n, dim, seed) == (6, 16, 42) and digest.decode() == basis.source_digest
            and len(blob) == 92 + 8 * 6 * 16)


def _model_golden(tmp_path):
    model = M.train_forest(_separable(11, n=40), trees=4, seed=5, basis_ref="0" * 64)
    path = tmp_path / "model.json"
    model.save(path)
    blob = path.read_bytes()
    M.PlagiarismModel.load(path).save(tmp_path / "again.json")
    doc = json.loads(blob)
    return ((tmp_path / "again.json").read_bytes() == blob and doc["format"] == "polyplag-model"
            and doc["version"] == 1 and doc["seed"] == 5 and len(doc["trees"]) == 4
            and doc["basis_ref"] == "0" * 64 and 0.0 <= doc["rho"] <= 1.0)


def _table_golden(tmp_path):
    rng = np.random.default_rng(12)
    vecs = [PairVector(f"q{k}", {c: float(rng.exponential()) for c in pairwise.REGISTERED_CLASSES}, lbl)
            for k, lbl in enumerate([1, -1, None])]
    path = tmp_path / "pairs.tsv"
    pairwise.write_pair_table(vecs, path)
    blob = path.read_bytes()
    pairwise.write_pair_table(pairwise.read_pair_table(path), tmp_path / "again.tsv")
    header = blob.decode().splitlines()[0].split("\t")
    return ((tmp_path / "again.tsv").read_bytes() == blob
            and header == ["pair_id", *pairwise.REGISTERED_CLASSES, "label"])


def _cache_golden(tmp_path):
    bundle = FeatureBundle(frame_times=np.arange(5) * 0.02)
    bundle.add("mfcc", np.random.default_rng(13).standard_normal((5, 13)))
    bundle.add("novelty", np.linspace(0, 1, 5))
    blob = cache.bundle_to_bytes(bundle)
    magic, version, n_classes, n_times = struct.unpack_from("<8sIII", blob)
    (crc,) = struct.unpack("<I", blob[-4:])
    return (cache.bundle_to_bytes(cache.bundle_from_bytes(blob)) == blob and magic == b"PLGFEAT\0"
            and version == 1 and (n_classes, n_times) == (2, 5) and crc == zlib.crc32(blob[:-4]))


def test_criterion_10_format_golden(criterion, tmp_path):
    checks = {"basis": _basis_golden(tmp_path), "model": _model_golden(tmp_path),
              "pair table": _table_golden(tmp_path), "feature cache": _cache_golden(tmp_path)}
    ok = all(checks.values())
    criterion(10, ok, "byte-exact round trips and header fields: "
                      + ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert ok
