"""Traditional per-track descriptors: timbral, cepstral, tonal and novelty.

Spectral functions accept either one 1024-bin magnitude column or a stack of
them as rows, shape (T, 1024), and reduce along the last axis.  Waveform
functions take one frame or a (T, frame_len) stack likewise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft

from .ingest import FrameSet, Spectrogram, N_BINS, TARGET_RATE, N_FFT

BIN_HZ = TARGET_RATE / N_FFT

N_MELS = 40
N_MFCC = 13
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-12
CHROMA_FMIN = 27.5
NOVELTY_HALF = 32

PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

# Krumhansl-Schmuckler probe-tone ratings, tonic first.
KS_MAJOR = (6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88)
KS_MINOR = (6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17)

FEATURE_CLASSES = ("timbral", "mfcc", "key", "novelty")
TIMBRAL_FIELDS = ("zcr", "rolloff", "entropy", "std", "skewness", "kurtosis", "envelope")


@dataclass
class FeatureBundle:
    """Per-track map from feature-class name to a (T, dim) sequence."""

    classes: dict = field(default_factory=dict)
    frame_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.classes[name]

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def names(self) -> list:
        return list(self.classes)

    def add(self, name: str, seq) -> None:
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim == 1:
            seq = seq[:, None]
        if not np.all(np.isfinite(seq)):
            raise ValueError(f"feature class {name!r} has non-finite values")
        self.classes[name] = np.ascontiguousarray(seq)


# ---------------------------------------------------------------- timbral


def zero_crossing_rate(frame) -> np.ndarray | float:
    """Fraction of consecutive sample pairs whose sign differs.

    Zero samples take the sign of the last non-zero sample before them;
    leading zeros have no sign and never count as a crossing.
    """
    x = np.asarray(frame, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("zero crossing rate needs at least two samples")
    s = np.sign(x)
    idx = np.where(s != 0, np.arange(n), 0)
    idx = np.maximum.accumulate(idx, axis=-1)
    filled = np.take_along_axis(s, idx, axis=-1)
    crossings = (filled[..., 1:] * filled[..., :-1]) < 0
    out = crossings.sum(axis=-1) / (n - 1)
    return float(out) if out.ndim == 0 else out


def spectral_rolloff(column, fraction: float = 0.85):
    """Smallest bin whose cumulative energy reaches ``fraction`` of the total."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    col = np.asarray(column, dtype=np.float64)
    cum = np.cumsum(col * col, axis=-1)
    total = cum[..., -1:]
    hit = cum >= fraction * total
    out = np.where(total[..., 0] > 0, np.argmax(hit, axis=-1), 0)
    return int(out) if out.ndim == 0 else out


def spectral_entropy(column):
    """Shannon entropy of the normalized spectrum, scaled to [0, 1]."""
    col = np.asarray(column, dtype=np.float64)
    total = col.sum(axis=-1, keepdims=True)
    p = col / np.where(total > 0, total, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    out = -terms.sum(axis=-1) / math.log2(col.shape[-1])
    out = np.clip(out, 0.0, 1.0) + 0.0  # drop negative zero
    return float(out) if out.ndim == 0 else out


def spectral_stats(column):
    """Population std, skewness and kurtosis (m4 / m2**2) of the magnitudes.

    Columns with std below 1e-12 report skewness and kurtosis as 0.
    """
    col = np.asarray(column, dtype=np.float64)
    dev = col - col.mean(axis=-1, keepdims=True)
    m2 = np.mean(dev**2, axis=-1)
    m3 = np.mean(dev**3, axis=-1)
    m4 = np.mean(dev**4, axis=-1)
    std = np.sqrt(m2)
    flat = std < STD_FLOOR
    safe = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, m3 / safe**1.5)
    kurt = np.where(flat, 0.0, m4 / safe**2)
    std = np.where(flat, 0.0, std)
    if std.ndim == 0:
        return float(std), float(skew), float(kurt)
    return std, skew, kurt


def amplitude_envelope(frame):
    """Root-mean-square level of the frame."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty frame")
    out = np.sqrt(np.mean(x * x, axis=-1))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- cepstral


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = N_MELS, n_bins: int = N_BINS, bin_hz: float = BIN_HZ,
                   fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_bins), equally spaced on the mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_bins) * bin_hz
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        bank[m] = np.maximum(0.0, np.minimum(rise, fall))
    bank.setflags(write=False)
    return bank


def mfcc(column, n_mfcc: int = N_MFCC) -> np.ndarray:
    """Mel-frequency cepstral coefficients of one or more magnitude columns."""
    col = np.asarray(column, dtype=np.float64)
    bank = mel_filterbank(n_bins=col.shape[-1])
    energies = (col * col) @ bank.T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    return scipy.fft.dct(logmel, type=2, norm="ortho", axis=-1)[..., :n_mfcc]


# ---------------------------------------------------------------- tonal


@lru_cache(maxsize=8)
def _pitch_class_map(n_bins: int = N_BINS, bin_hz: float = BIN_HZ) -> np.ndarray:
    """(12, n_bins) 0/1 matrix assigning each bin to a pitch class (C = 0)."""
    freqs = np.arange(n_bins) * bin_hz
    onehot = np.zeros((12, n_bins))
    valid = freqs >= CHROMA_FMIN
    semis = np.round(12.0 * np.log2(freqs[valid] / 440.0)).astype(int)
    classes = (semis + 9) % 12  # A4 is pitch class 9 counting from C
    onehot[classes, np.flatnonzero(valid)] = 1.0
    onehot.setflags(write=False)
    return onehot


def chroma(column, bin_hz: float = BIN_HZ) -> np.ndarray:
    """L1-normalized pitch-class energy profile (index 0 = C)."""
    col = np.asarray(column, dtype=np.float64)
    energy = (col * col) @ _pitch_class_map(col.shape[-1], bin_hz).T
    total = energy.sum(axis=-1, keepdims=True)
    return energy / np.where(total > 0, total, 1.0)


@dataclass(frozen=True)
class KeyProfileTable:
    """24 standardized key templates: C..B major, then C..B minor."""

    profiles: np.ndarray
    names: tuple

    @classmethod
    def krumhansl(cls) -> "KeyProfileTable":
        rows, names = [], []
        for template, mode in ((KS_MAJOR, "major"), (KS_MINOR, "minor")):
            base = _standardize(template)
            for k in range(12):
                rows.append(np.roll(base, k))
                names.append(f"{PITCH_CLASSES[k]} {mode}")
        profiles = np.array(rows)
        profiles.setflags(write=False)
        return cls(profiles, tuple(names))


def _standardize(v):
    """Zero-mean, unit-norm copy of ``v``, or None for constant input.

    Uses exactly rounded sums so the result does not depend on element order.
    """
    v = [float(x) for x in v]
    mean = math.fsum(v) / len(v)
    dev = [x - mean for x in v]
    peak = max(abs(d) for d in dev)
    if peak == 0.0:
        return None
    dev = [d / peak for d in dev]  # keeps tiny inputs from underflowing the norm
    norm = math.sqrt(math.fsum(d * d for d in dev))
    return np.array([d / norm for d in dev])


@lru_cache(maxsize=1)
def default_profiles() -> KeyProfileTable:
    return KeyProfileTable.krumhansl()


def key_strength(chroma_vec, profiles: KeyProfileTable | None = None) -> np.ndarray:
    """Pearson correlation of a chroma vector with each of the 24 key templates.

    Sums are exactly rounded, which makes the scores exactly equivariant
    under pitch-class rotation.  Constant chroma scores zero everywhere.
    """
    profiles = profiles or default_profiles()
    c = np.asarray(chroma_vec, dtype=np.float64)
    if c.ndim == 2:
        return np.array([key_strength(row, profiles) for row in c])
    if c.shape != (12,):
        raise ValueError("chroma must be 12-dimensional")
    z = _standardize(c)
    if z is None:
        return np.zeros(len(profiles.profiles))
    scores = np.array([math.fsum(z * p) for p in profiles.profiles])
    return np.clip(scores, -1.0, 1.0)


# ---------------------------------------------------------------- novelty


def cosine_self_similarity(seq) -> np.ndarray:
    """Cosine similarity of every pair of frames.

    A zero frame is similar (1) only to other zero frames.
    """
    X = np.asarray(seq, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    U = X / np.where(zero, 1.0, norms)[:, None]
    S = U @ U.T
    S[np.ix_(zero, zero)] = 1.0
    return np.clip(S, -1.0, 1.0)


@lru_cache(maxsize=8)
def checkerboard_kernel(half: int = NOVELTY_HALF) -> np.ndarray:
    """Gaussian-tapered checkerboard of size (2*half, 2*half), sigma = half / 2.

    Offsets are taken at half-integer positions so that the four quadrants
    are symmetric; the kernel is scaled to unit absolute sum.
    """
    u = np.arange(2 * half) - half + 0.5
    sigma = half / 2.0
    g = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * sigma**2))
    kernel = np.sign(u)[:, None] * np.sign(u)[None, :] * g
    kernel /= np.abs(kernel).sum()
    kernel.setflags(write=False)
    return kernel


def novelty_curve(seq, kernel_half: int = NOVELTY_HALF) -> np.ndarray:
    """Checkerboard-kernel correlation along the self-similarity diagonal.

    Index t compares frames [t - half, t) against [t, t + half).  The
    similarity matrix is zero-padded at the edges and the output is
    clipped at zero.
    """
    S = cosine_self_similarity(seq)
    T = S.shape[0]
    if T < 2:
        raise ValueError("novelty needs at least two frames")
    K = checkerboard_kernel(kernel_half)
    L = kernel_half
    P = np.zeros((T + 2 * L, T + 2 * L))
    P[L:L + T, L:L + T] = S
    out = np.empty(T)
    for t in range(T):
        out[t] = np.sum(K * P[t:t + 2 * L, t:t + 2 * L])
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------- ranking


def f_score(values, labels) -> float:
    """Fisher-style discriminability of one feature column for labels in {+1, -1}.

    Returns inf when the class variances vanish but the means differ.
    """
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels)
    pos, neg = x[y == 1], x[y == -1]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("f_score needs examples of both classes")
    mean = x.mean()
    num = (pos.mean() - mean) ** 2 + (neg.mean() - mean) ** 2
    var_pos = pos.var(ddof=1) if pos.size > 1 else 0.0
    var_neg = neg.var(ddof=1) if neg.size > 1 else 0.0
    den = var_pos + var_neg
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


# ---------------------------------------------------------------- bundles


def timbral_features(frames: np.ndarray, columns: np.ndarray) -> np.ndarray:
    """(T, 7) matrix: zcr, rolloff, entropy, std, skewness, kurtosis, envelope.

    Rolloff is reported as a fraction of the spectral range so that all
    seven entries share a comparable scale.
    """
    std, skew, kurt = spectral_stats(columns)
    rolloff = spectral_rolloff(columns) / columns.shape[-1]
    return np.column_stack([
        zero_crossing_rate(frames),
        rolloff,
        spectral_entropy(columns),
        std,
        skew,
        kurt,
        amplitude_envelope(frames),
    ])


def extract_descriptors(frames: FrameSet, spec: Spectrogram,
                        kernel_half: int = NOVELTY_HALF,
                        profiles: KeyProfileTable | None = None) -> FeatureBundle:
    """Compute the timbral, mfcc, key and novelty classes for one track."""
    cols = spec.columns
    if cols.shape[0] != len(frames):
        raise ValueError("frame count and spectrogram columns disagree")
    bundle = FeatureBundle(frame_times=np.asarray(spec.frame_times, dtype=np.float64))
    bundle.add("timbral", timbral_features(frames.frames, cols))
    ceps = mfcc(cols)
    bundle.add("mfcc", ceps)
    bundle.add("key", key_strength(chroma(cols, spec.bin_hz), profiles))
    # c0 tracks loudness only; structure is read from the spectral shape
    bundle.add("novelty", novelty_curve(ceps[:, 1:], kernel_half) if len(frames) > 1
               else np.zeros(1))
    return bundle
