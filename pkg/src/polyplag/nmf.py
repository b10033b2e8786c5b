"""Exemplar-basis NMF embedding.

A fixed dictionary of magnitude spectra (frames drawn at random from a
training corpus) is shared by every track.  For each track only the
activations are estimated, by multiplicative updates that decrease the
generalized Kullback-Leibler divergence between the spectrogram ``M`` and its
reconstruction ``B @ W``::

    W <- W * (B.T @ (M / (B @ W))) / (B.T @ 1)

Summation order: the divergence is accumulated sequentially over the matrix
in row-major order; products use numpy ``matmul`` on C-ordered float64
arrays.  Identical inputs therefore give identical results on one platform.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from collections.abc import Sequence
from dataclasses import dataclass

import numba as nb
import numpy as np

from .ingest import Spectrogram

logger = logging.getLogger(__name__)

EPS = 1e-12
DEFAULT_N_BASES = 64
DEFAULT_MAX_ITER = 200
DEFAULT_REL_TOL = 1e-5
_NO_RATIO = np.empty((1, 1))

BASIS_MAGIC = b"PLGBASIS"
BASIS_VERSION = 1
# magic, version, N, dim, seed, 64-char hex digest
_BASIS_HEADER = struct.Struct("<8sIIIq64s")


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSet:
    """Exemplar dictionary, stored as a (dim, N) matrix of spectra."""

    columns: np.ndarray
    seed: int
    source_digest: str

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise BasisError("basis columns must form a 2-D (dim, N) array")
        if not np.all(np.isfinite(cols)) or np.any(cols < 0):
            raise BasisError("basis entries must be finite and non-negative")
        if np.any(cols.max(axis=0) <= 0):
            raise BasisError("every basis vector needs a strictly positive entry")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    def digest(self) -> str:
        """Content hash identifying this exact basis (used as a model reference)."""
        return hashlib.sha256(to_bytes(self)).hexdigest()


@dataclass
class WeightMatrix:
    values: np.ndarray  # (N, T)
    iterations_run: int
    final_divergence: float


def _as_matrix(M) -> np.ndarray:
    if isinstance(M, Spectrogram):
        return M.values
    return np.asarray(M, dtype=np.float64)


def corpus_digest(corpus) -> str:
    h = hashlib.sha256()
    for spec in corpus:
        _digest_update(h, _as_matrix(spec))
    return h.hexdigest()


def _digest_update(h, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    h.update(struct.pack("<II", *values.shape))
    h.update(values.tobytes())


def draw_exemplar_bases(corpus, n: int = DEFAULT_N_BASES, seed: int = 0) -> BasisSet:
    """Sample ``n`` distinct non-zero frames uniformly from a corpus.

    Frames are pooled in corpus order, then frame order; all-zero frames are
    excluded before sampling.  ``corpus`` is traversed twice and may be a lazy
    sequence, so the pooled frames never need to sit in memory together.
    """
    if not isinstance(corpus, Sequence):
        corpus = list(corpus)
    h = hashlib.sha256()
    counts, dims = [], set()
    for spec in corpus:
        values = _as_matrix(spec)
        dims.add(values.shape[0])
        counts.append(int(np.count_nonzero(values.max(axis=0) > 0)) if values.size else 0)
        _digest_update(h, values)
    if not counts:
        raise BasisError("empty corpus")
    if len(dims) != 1:
        raise BasisError(f"corpus spectrograms disagree on dimension: {sorted(dims)}")
    total = sum(counts)
    if total < n:
        raise BasisError(f"corpus has {total} non-zero frames, need {n}")

    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=n, replace=False)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    owner = np.searchsorted(offsets, picks, side="right") - 1
    columns = np.empty((dims.pop(), n))
    for k, spec in enumerate(corpus):
        wanted = np.flatnonzero(owner == k)
        if wanted.size == 0:
            continue
        values = _as_matrix(spec)
        eligible = np.flatnonzero(values.max(axis=0) > 0)
        columns[:, wanted] = values[:, eligible[picks[wanted] - offsets[k]]]
    return BasisSet(columns, seed=int(seed), source_digest=h.hexdigest())


_SERIES_LIMIT = 0.1  # |x| below which x - log1p(x) is summed as a series
_SERIES_TERMS = 18


@nb.njit(nogil=True, cache=True)
def _kl_term(m, r):
    """m log(m/r) - m + r for m, r > 0, accurate relative to its own size.

    Near r == m the direct form cancels to rounding noise, so the term is
    rewritten as m * (x - log1p(x)) with x = (r - m) / m and summed as
    x^2/2 - x^3/3 + ... .
    """
    x = (r - m) / m
    if abs(x) >= _SERIES_LIMIT:
        return m * math.log(m / r) - m + r
    acc = 0.0
    for k in range(_SERIES_TERMS + 1, 1, -1):
        acc = 1.0 / k - x * acc
    return m * x * x * acc


@nb.njit(nogil=True, cache=True)
def _kl_terms(M, R, ratio, want_ratio):
    total = 0.0
    rows, cols = M.shape
    for i in range(rows):
        for j in range(cols):
            m = M[i, j]
            r = R[i, j]
            if want_ratio:
                ratio[i, j] = m / (r + EPS)
            if m > 0.0:
                total += _kl_term(m, r if r > 0.0 else EPS)
            else:
                total += r
    return total


def generalized_kl(M, R) -> float:
    """sum(M * log(M / R) - M + R) with 0 * log 0 = 0.

    Entries of ``R`` that are exactly zero are replaced by 1e-12 inside the log.
    Terms are accumulated sequentially in row-major order.
    """
    M = np.ascontiguousarray(M, dtype=np.float64)
    R = np.ascontiguousarray(R, dtype=np.float64)
    if M.shape != R.shape:
        raise ValueError(f"shape mismatch: {M.shape} vs {R.shape}")
    if M.ndim != 2:
        M, R = M.reshape(1, -1), R.reshape(1, -1)
    return max(float(_kl_terms(M, R, _NO_RATIO, False)), 0.0)


def kl_and_ratio(M: np.ndarray, R: np.ndarray):
    """Divergence of ``R`` from ``M`` together with the update ratio ``M / (R + eps)``."""
    ratio = np.empty_like(M)
    kl = _kl_terms(M, R, ratio, True)
    return max(float(kl), 0.0), ratio


def kl_update(M: np.ndarray, B: np.ndarray, W: np.ndarray, denom: np.ndarray | None = None):
    """One multiplicative update of the activations."""
    if denom is None:
        denom = B.sum(axis=0)[:, None] + EPS
    ratio = M / (B @ W + EPS)
    return W * (B.T @ ratio) / denom


def _check_inputs(M: np.ndarray, B: np.ndarray):
    if M.ndim != 2:
        raise ValueError("M must be a 2-D (dim, frames) array")
    if M.shape[0] != B.shape[0]:
        raise ValueError(f"dimension mismatch: M has {M.shape[0]} rows, bases {B.shape[0]}")
    if not np.all(np.isfinite(M)):
        raise ValueError("M contains non-finite values")


def infer_weights(
    M, B, max_iter: int = DEFAULT_MAX_ITER, rel_tol: float = DEFAULT_REL_TOL
) -> WeightMatrix:
    """Estimate non-negative activations of the fixed bases for every frame.

    ``W`` starts at all ones.  Iteration stops once the relative decrease of
    the divergence drops below ``rel_tol`` or after ``max_iter`` updates.
    """
    M = _as_matrix(M)
    B = B.columns if isinstance(B, BasisSet) else np.asarray(B, dtype=np.float64)
    _check_inputs(M, B)

    M = np.ascontiguousarray(M)
    W = np.ones((B.shape[1], M.shape[1]))
    denom = B.sum(axis=0)[:, None] + EPS
    prev, ratio = kl_and_ratio(M, B @ W)
    it = 0
    cur = prev
    while it < max_iter:
        W = W * (B.T @ ratio) / denom
        it += 1
        cur, ratio = kl_and_ratio(M, B @ W)
        if cur == 0.0 or prev == 0.0 or (prev - cur) / prev < rel_tol:
            break
        prev = cur
    return WeightMatrix(values=W, iterations_run=it, final_divergence=cur)


def normalize_columns(W: np.ndarray) -> np.ndarray:
    sums = W.sum(axis=0)
    safe = np.where(sums > 0, sums, 1.0)
    return W / safe


def nmf_feature_sequence(M, B, normalize: bool = True, **kwargs) -> np.ndarray:
    """Per-frame activation vectors, shape (T, N).

    With ``normalize`` each vector is scaled to unit L1 norm; all-zero frames
    stay zero.
    """
    W = infer_weights(M, B, **kwargs).values
    if normalize:
        W = normalize_columns(W)
    return np.ascontiguousarray(W.T)


def to_bytes(basis: BasisSet) -> bytes:
    digest = basis.source_digest.encode("ascii")
    if len(digest) != 64:
        raise BasisError("source digest must be a 64-character hex string")
    header = _BASIS_HEADER.pack(
        BASIS_MAGIC, BASIS_VERSION, basis.n, basis.dim, basis.seed, digest
    )
    return header + np.ascontiguousarray(basis.columns, dtype="<f8").tobytes()


def from_bytes(blob: bytes) -> BasisSet:
    if len(blob) < _BASIS_HEADER.size:
        raise BasisError("truncated basis file header")
    magic, version, n, dim, seed, digest = _BASIS_HEADER.unpack_from(blob)
    if magic != BASIS_MAGIC:
        raise BasisError("not a basis file (bad magic)")
    if version != BASIS_VERSION:
        raise BasisError(f"unsupported basis file version {version}")
    body = blob[_BASIS_HEADER.size:]
    if len(body) != 8 * n * dim:
        raise BasisError(f"basis payload has {len(body)} bytes, expected {8 * n * dim}")
    values = np.frombuffer(body, dtype="<f8").reshape(dim, n)
    return BasisSet(values.astype(np.float64), seed=seed, source_digest=digest.decode("ascii"))


def save_basis(basis: BasisSet, path) -> None:
    blob = to_bytes(basis)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_basis(path) -> BasisSet:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def describe_header(blob: bytes) -> dict:
    """Decode just the header fields of a serialized basis."""
    magic, version, n, dim, seed, digest = _BASIS_HEADER.unpack_from(blob)
    return {
        "magic": magic,
        "version": version,
        "n": n,
        "dim": dim,
        "seed": seed,
        "source_digest": digest.decode("ascii"),
    }
