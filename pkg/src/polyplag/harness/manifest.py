"""Pair manifests and train/test splitting."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

REQUIRED_COLUMNS = ("pair_id", "path_a", "path_b", "label")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    pair_id: str
    path_a: str
    path_b: str
    label: int
    genre: str = ""


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: str = ""

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.pair_id in seen:
                raise ManifestError(f"duplicate pair_id {e.pair_id!r}")
            seen.add(e.pair_id)
            if e.label not in (1, -1):
                raise ManifestError(f"pair {e.pair_id!r}: label must be +1 or -1")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.root, path)

    def tracks(self) -> list:
        """Distinct resolved track paths in first-appearance order."""
        out = {}
        for e in self.entries:
            out.setdefault(self.resolve(e.path_a), None)
            out.setdefault(self.resolve(e.path_b), None)
        return list(out)

    def subset(self, entries) -> "Manifest":
        return Manifest(list(entries), self.root)


def _parse_label(text: str, lineno: int) -> int:
    text = text.strip()
    if text in ("+1", "1"):
        return 1
    if text == "-1":
        return -1
    raise ManifestError(f"row {lineno}: bad label {text!r} (expected +1 or -1)")


def load_manifest(path) -> Manifest:
    """Read a comma-separated manifest with header pair_id,path_a,path_b,label[,genre].

    Relative track paths are resolved against the manifest's directory.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        entries, seen = [], set()
        for lineno, row in enumerate(reader, start=2):
            pid = row["pair_id"].strip()
            if pid in seen:
                raise ManifestError(f"{path}: duplicate pair_id {pid!r} (row {lineno})")
            seen.add(pid)
            entries.append(ManifestEntry(
                pair_id=pid,
                path_a=row["path_a"].strip(),
                path_b=row["path_b"].strip(),
                label=_parse_label(row["label"] or "", lineno),
                genre=(row.get("genre") or "").strip(),
            ))
    return Manifest(entries, root=os.path.dirname(os.path.abspath(path)))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*REQUIRED_COLUMNS, "genre"])
        for e in manifest.entries:
            writer.writerow([e.pair_id, e.path_a, e.path_b, "+1" if e.label == 1 else "-1", e.genre])


def split(manifest: Manifest, ratio: float = 0.9, seed: int = 0, stratified: bool = True):
    """Random train/test split.

    Each group (each class when stratified, otherwise the whole manifest) is
    shuffled with ``seed`` and its first ceil(ratio * n) entries go to train.
    """
    if len(manifest) == 0:
        raise ManifestError("cannot split an empty manifest")
    if not 0.0 < ratio <= 1.0:
        raise ManifestError("split ratio must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if stratified:
        groups = [[e for e in manifest if e.label == lbl] for lbl in (1, -1)]
        groups = [g for g in groups if g]
    else:
        groups = [list(manifest)]
    train, test = [], []
    for group in groups:
        order = rng.permutation(len(group))
        cut = math.ceil(ratio * len(group))
        train.extend(group[k] for k in order[:cut])
        test.extend(group[k] for k in order[cut:])
    return manifest.subset(train), manifest.subset(test)
