"""End-to-end orchestration: audio files to pair vectors to trained models."""

from __future__ import annotations

import logging
import os
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .. import descriptors, ingest, nmf
from ..model import PlagiarismModel, train_forest
from ..pairwise import (NMF_CLASSES, REGISTERED_CLASSES, TRADITIONAL_CLASSES, PairVector,
                        SelectionMask, pair_distance_vector, restrict, select_features)
from .cache import FeatureCache
from .config import PipelineConfig
from .manifest import Manifest, split
from .metrics import EvalReport, evaluate

logger = logging.getLogger(__name__)

SYSTEMS = {
    "traditional": TRADITIONAL_CLASSES,
    "nmf": NMF_CLASSES,
    "combined": REGISTERED_CLASSES,
}


class LazySpectrograms(Sequence):
    """Spectrograms of a list of files, recomputed on every access."""

    def __init__(self, paths, config: PipelineConfig):
        self.paths = list(paths)
        self.config = config

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, k):
        spec_cfg = self.config.spectrogram_config()
        track = ingest.load_track(self.paths[k], spec_cfg)
        return ingest.track_spectrogram(track, spec_cfg)[1]


def build_bases(paths, config: PipelineConfig) -> nmf.BasisSet:
    return nmf.draw_exemplar_bases(LazySpectrograms(paths, config),
                                   n=config.n_bases, seed=config.basis_seed)


def track_bundle(path, config: PipelineConfig, basis: nmf.BasisSet) -> descriptors.FeatureBundle:
    """All feature classes of one audio file."""
    spec_cfg = config.spectrogram_config()
    track = ingest.load_track(path, spec_cfg)
    frames, spec = ingest.track_spectrogram(track, spec_cfg)
    bundle = descriptors.extract_descriptors(frames, spec, kernel_half=config.novelty_half)
    bundle.add("nmf", nmf.nmf_feature_sequence(
        spec, basis, normalize=config.nmf_normalize,
        max_iter=config.nmf_max_iter, rel_tol=config.nmf_rel_tol))
    return bundle


def _pool_map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def extract_bundles(paths, config: PipelineConfig, basis: nmf.BasisSet,
                    cache_dir=None) -> dict:
    """Map every path to its feature bundle, through the cache when one is given."""
    digest = config.feature_digest(basis.digest())
    cache = FeatureCache(cache_dir) if cache_dir is not None else None

    def one(path):
        compute = lambda p: track_bundle(p, config, basis)  # noqa: E731
        return cache.get(path, digest, compute) if cache else compute(path)

    paths = list(paths)
    return dict(zip(paths, _pool_map(one, paths, config.workers)))


def pair_vectors(manifest: Manifest, bundles: dict, config: PipelineConfig) -> list:
    align_cfg = config.alignment_config()

    def one(entry):
        return pair_distance_vector(bundles[manifest.resolve(entry.path_a)],
                                    bundles[manifest.resolve(entry.path_b)],
                                    align_cfg, entry.pair_id, entry.label)

    return _pool_map(one, list(manifest), config.workers)


def fit(vectors, config: PipelineConfig, classes=REGISTERED_CLASSES,
        basis_ref: str = "") -> PlagiarismModel:
    """Feature selection followed by forest training on labelled vectors."""
    vectors = restrict(vectors, classes)
    labels = {v.label for v in vectors}
    if len(labels) > 1:
        mask = select_features(vectors, config.keep_fraction)
    else:
        mask = SelectionMask.keep_all(vectors[0].feature_names)
    model = train_forest(vectors, trees=config.trees, seed=config.forest_seed,
                         mask=mask, basis_ref=basis_ref, workers=config.workers)
    model.rho = config.rho
    return model


@dataclass
class StudyResult:
    reports: dict
    models: dict
    train_ids: list
    test_ids: list
    basis_ref: str
    seconds: float
    vectors: list = field(default_factory=list)

    def summary_lines(self) -> list:
        lines = []
        for name, rep in self.reports.items():
            lines.append(f"{name:12s} accuracy={rep.accuracy:.3f} precision={rep.precision:.3f} "
                         f"recall={rep.recall:.3f} pr_auc={rep.auc:.3f}")
        return lines


def run_study(manifest: Manifest, config: PipelineConfig, cache_dir=None) -> StudyResult:
    """Train and test the traditional, NMF-only and combined systems on one split.

    Exemplar bases are drawn from training tracks only.
    """
    started = time.perf_counter()
    train, test = split(manifest, config.split_ratio, config.split_seed, config.stratified)
    basis = build_bases(train.tracks(), config)
    logger.info("drew %d exemplar bases from %d training tracks", basis.n, len(train.tracks()))
    bundles = extract_bundles(manifest.tracks(), config, basis, cache_dir)
    vectors = pair_vectors(manifest, bundles, config)
    by_id = {v.pair_id: v for v in vectors}
    train_vecs = [by_id[e.pair_id] for e in train]
    test_vecs = [by_id[e.pair_id] for e in test]
    genres = [e.genre for e in test]

    reports, models = {}, {}
    for name, classes in SYSTEMS.items():
        model = fit(train_vecs, config, classes, basis.digest())
        models[name] = model
        reports[name] = evaluate(model, restrict(test_vecs, classes), genres)
    return StudyResult(reports, models, [e.pair_id for e in train], [e.pair_id for e in test],
                       basis.digest(), time.perf_counter() - started, vectors)


def predict_pair(path_a, path_b, model: PlagiarismModel, basis: nmf.BasisSet,
                 config: PipelineConfig) -> tuple:
    """Score one pair of files; returns ``(label, score, PairVector)``."""
    bundles = extract_bundles([os.fspath(path_a), os.fspath(path_b)], config, basis)
    a, b = bundles.values() if len(bundles) == 2 else (next(iter(bundles.values())),) * 2
    vec = pair_distance_vector(a, b, config.alignment_config(model.feature_names))
    return model.classify(vec), model.score(vec), vec
