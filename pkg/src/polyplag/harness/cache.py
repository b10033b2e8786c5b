"""On-disk cache of per-track feature bundles.

Entries are keyed by the SHA-256 of the audio file bytes and a digest of the
feature configuration.  File layout (little endian)::

    magic      8 bytes  b"PLGFEAT\\0"
    version    u32
    n_classes  u32
    n_times    u32
    frame_times          n_times x f64
    per class:
        name_len u16, name (utf-8), rows u32, dim u32, rows*dim x f64 (row-major)
    crc32      u32      over every preceding byte

Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
import zlib

import numpy as np

from ..descriptors import FeatureBundle

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"PLGFEAT\0"
FEATURE_VERSION = 1
_HEAD = struct.Struct("<8sIII")


class CacheError(ValueError):
    pass


def bundle_to_bytes(bundle: FeatureBundle) -> bytes:
    times = np.ascontiguousarray(bundle.frame_times, dtype="<f8")
    parts = [_HEAD.pack(FEATURE_MAGIC, FEATURE_VERSION, len(bundle.classes), times.shape[0]),
             times.tobytes()]
    for name, seq in bundle.classes.items():
        raw = name.encode("utf-8")
        seq = np.ascontiguousarray(seq, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", *seq.shape))
        parts.append(seq.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def bundle_from_bytes(blob: bytes) -> FeatureBundle:
    if len(blob) < _HEAD.size + 4:
        raise CacheError("truncated feature file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CacheError("feature file checksum mismatch")
    magic, version, n_classes, n_times = _HEAD.unpack_from(body)
    if magic != FEATURE_MAGIC:
        raise CacheError("bad feature file magic")
    if version != FEATURE_VERSION:
        raise CacheError(f"unsupported feature file version {version}")
    off = _HEAD.size
    try:
        times = np.frombuffer(body, "<f8", n_times, off).astype(np.float64)
        off += 8 * n_times
        bundle = FeatureBundle(frame_times=times)
        for _ in range(n_classes):
            (name_len,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + name_len].decode("utf-8")
            off += name_len
            rows, dim = struct.unpack_from("<II", body, off)
            off += 8
            values = np.frombuffer(body, "<f8", rows * dim, off).reshape(rows, dim)
            off += 8 * rows * dim
            bundle.classes[name] = values.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CacheError(f"corrupt feature file: {exc}") from exc
    if off != len(body):
        raise CacheError("trailing bytes in feature file")
    return bundle


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class FeatureCache:
    """Compute-or-load store for :class:`FeatureBundle` objects."""

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        os.makedirs(self.directory, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def entry_path(self, track_path, config_digest: str) -> str:
        key = hashlib.sha256(f"{file_digest(track_path)}:{config_digest}".encode()).hexdigest()
        return os.path.join(self.directory, f"{key}.feat")

    def get(self, track_path, config_digest: str, compute) -> FeatureBundle:
        path = self.entry_path(track_path, config_digest)
        if os.path.exists(path):
            try:
                with open(path, "rb") as fh:
                    bundle = bundle_from_bytes(fh.read())
                self.hits += 1
                return bundle
            except CacheError as exc:
                logger.warning("discarding cache entry %s: %s", path, exc)
        self.misses += 1
        bundle = compute(track_path)
        atomic_write(path, bundle_to_bytes(bundle))
        return bundle


def feature_cache(track_path, config_digest: str, compute, cache_dir) -> FeatureBundle:
    return FeatureCache(cache_dir).get(track_path, config_digest, compute)
