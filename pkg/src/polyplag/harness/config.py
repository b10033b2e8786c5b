"""Pipeline configuration.

Every tunable default is a named key of :class:`PipelineConfig`.  A config
file holds ``key = value`` lines; ``#`` starts a comment, blank lines are
ignored and values are parsed according to the type of the key's default
(booleans accept true/false/yes/no/1/0).  Unknown keys are an error.

Example::

    # shorter exemplar dictionary, milder substitution penalty
    n_bases = 32
    w_sub = 2.5
    stratified = false
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .. import align, ingest
from ..pairwise import AlignmentConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # ingest
    sample_rate: int = ingest.TARGET_RATE
    frame_len: int = ingest.FRAME_LEN
    hop: int = ingest.HOP
    n_fft: int = ingest.N_FFT
    n_bins: int = ingest.N_BINS
    window: str = "hann"
    # nmf
    n_bases: int = 64
    basis_seed: int = 0
    nmf_max_iter: int = 200
    nmf_rel_tol: float = 1e-5
    nmf_normalize: bool = True
    # descriptors
    novelty_half: int = 32
    # alignment
    w_sub: float = 4.0
    w_ins: float = 1.0
    w_del: float = 1.0
    slope_enabled: bool = True
    slope_window: int = 5
    max_slope: float = 2.0
    normalize_distances: bool = True
    distance_cap: float = 1e9
    # selection and model
    keep_fraction: float = 0.75
    trees: int = 150
    forest_seed: int = 0
    rho: float = 0.5
    # harness
    split_ratio: float = 0.9
    split_seed: int = 0
    stratified: bool = True
    synth_seed: int = 0
    workers: int = 1

    def spectrogram_config(self) -> ingest.SpectrogramConfig:
        return ingest.SpectrogramConfig(
            sample_rate=self.sample_rate, frame_len=self.frame_len, hop=self.hop,
            n_fft=self.n_fft, n_bins=self.n_bins, window=self.window,
        )

    def alignment_config(self, classes=None) -> AlignmentConfig:
        kwargs = {}
        if classes is not None:
            kwargs["classes"] = tuple(classes)
        return AlignmentConfig(
            weights=align.StepWeights(self.w_sub, self.w_ins, self.w_del),
            slope=align.SlopeConstraint(self.slope_window, self.max_slope)
            if self.slope_enabled else None,
            normalize=self.normalize_distances,
            cap=self.distance_cap,
            **kwargs,
        )

    def feature_digest(self, basis_digest: str = "") -> str:
        """Hash of everything that influences per-track features."""
        keys = ("sample_rate", "frame_len", "hop", "n_fft", "n_bins", "window",
                "nmf_max_iter", "nmf_rel_tol", "nmf_normalize", "novelty_half")
        doc = {k: getattr(self, k) for k in keys}
        doc["basis"] = basis_digest
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **overrides) -> "PipelineConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **clean)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, defaults[key])
    return dataclasses.replace(base, **values)


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(config: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
