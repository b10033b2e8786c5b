"""Synthetic stand-in corpus of plagiarized and unrelated track pairs.

Each "song" is a short score: a melody over a slower chord accompaniment,
rendered as decaying harmonic tones.  A positive pair couples a song with a
transformed rendition of the same score (tempo change, small pitch shift,
additive noise, gain change); a negative pair couples two independently
drawn songs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..ingest import TARGET_RATE, write_wav
from .manifest import Manifest, ManifestEntry, write_manifest

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)


@dataclass(frozen=True)
class Note:
    onset: float  # seconds
    duration: float
    pitch: float  # MIDI number, fractional allowed
    velocity: float


@dataclass(frozen=True)
class Song:
    notes: tuple
    harmonics: tuple  # relative amplitude of partials 1..K
    decay: float  # 1/s exponential decay of each note
    length: float  # seconds


@dataclass(frozen=True)
class Transform:
    """Rendition changes applied to a copied song; the defaults are the identity."""

    stretch: float = 1.0  # >1 is slower
    semitones: float = 0.0
    noise_db: float | None = None  # noise level relative to signal RMS
    gain: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    n_pos: int = 60
    n_neg: int = 60
    seed: int = 0
    sample_rate: int = TARGET_RATE
    duration: tuple = (5.0, 7.0)
    stretch: tuple = (0.8, 1.25)
    semitones: tuple = (-1.0, 1.0)
    noise_db: float = -20.0
    gain: tuple = (0.5, 1.5)
    peak: float = 0.5


def random_song(rng: np.random.Generator, duration: float) -> Song:
    tonic = 48 + int(rng.integers(0, 12))
    scale = MAJOR_SCALE if rng.random() < 0.6 else MINOR_SCALE
    beat = float(rng.uniform(0.22, 0.4))
    notes = []

    # chords: one triad per four beats, two octaves below the melody register
    t = 0.0
    while t < duration:
        degree = int(rng.integers(0, 7))
        for step in (0, 2, 4):
            d = degree + step
            pitch = tonic + scale[d % 7] + 12 * (d // 7)
            notes.append(Note(t, 4 * beat, float(pitch), 0.35))
        t += 4 * beat

    # melody: random walk on scale degrees with mixed note lengths
    t, degree = 0.0, int(rng.integers(7, 14))
    while t < duration:
        length = beat * float(rng.choice([0.5, 1.0, 1.0, 2.0]))
        degree = int(np.clip(degree + rng.integers(-3, 4), 5, 18))
        if rng.random() < 0.9:
            pitch = tonic + 12 + scale[degree % 7] + 12 * (degree // 7 - 1)
            notes.append(Note(t, length, float(pitch), float(rng.uniform(0.6, 1.0))))
        t += length

    k = int(rng.integers(4, 9))
    rolloff = float(rng.uniform(0.5, 1.5))
    harmonics = tuple(float(h ** -rolloff) for h in range(1, k + 1))
    return Song(tuple(notes), harmonics, float(rng.uniform(1.5, 4.0)), float(duration))


def midi_to_hz(pitch) -> float:
    return 440.0 * 2.0 ** ((pitch - 69.0) / 12.0)


def render(song: Song, transform: Transform = Transform(), sample_rate: int = TARGET_RATE,
           peak: float = 0.5, rng: np.random.Generator | None = None) -> np.ndarray:
    """Synthesize a song; noise (if requested) is drawn from ``rng``."""
    n = int(round(song.length * transform.stretch * sample_rate))
    out = np.zeros(n)
    nyquist = sample_rate / 2.0
    for note in song.notes:
        start = int(round(note.onset * transform.stretch * sample_rate))
        if start >= n:
            continue
        length = min(int(round(note.duration * transform.stretch * sample_rate)), n - start)
        t = np.arange(length) / sample_rate
        f0 = midi_to_hz(note.pitch + transform.semitones)
        env = np.exp(-song.decay * t) * np.minimum(1.0, t / 0.01)
        env *= np.minimum(1.0, (length - np.arange(length)) / (0.01 * sample_rate))
        tone = np.zeros(length)
        for h, amp in enumerate(song.harmonics, start=1):
            if h * f0 >= nyquist:
                break
            tone += amp * np.sin(2.0 * np.pi * h * f0 * t)
        out[start:start + length] += note.velocity * env * tone
    top = np.max(np.abs(out))
    if top > 0:
        out *= peak / top
    if transform.noise_db is not None:
        if rng is None:
            raise ValueError("noise requested without a random generator")
        rms = np.sqrt(np.mean(out * out))
        out = out + rng.standard_normal(n) * rms * 10.0 ** (transform.noise_db / 20.0)
    return np.clip(out * transform.gain, -1.0, 1.0)


def random_transform(rng: np.random.Generator, config: SynthConfig) -> Transform:
    return Transform(
        stretch=float(rng.uniform(*config.stretch)),
        semitones=float(rng.uniform(*config.semitones)),
        noise_db=config.noise_db,
        gain=float(rng.uniform(*config.gain)),
    )


def generate_synthetic_pairs(out_dir, config: SynthConfig = SynthConfig()) -> Manifest:
    """Write ``n_pos + n_neg`` pairs of WAV files plus ``manifest.csv`` into ``out_dir``.

    Pair ``k`` draws from a generator seeded by ``(seed, k)``, so reruns with
    the same configuration reproduce identical files.
    """
    out_dir = os.fspath(out_dir)
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    entries = []
    jobs = [("pos", k, 1) for k in range(config.n_pos)] + \
           [("neg", k, -1) for k in range(config.n_neg)]
    for index, (kind, k, label) in enumerate(jobs):
        rng = np.random.default_rng([config.seed, index])
        pid = f"{kind}{k:04d}"
        song = random_song(rng, float(rng.uniform(*config.duration)))
        a = render(song, sample_rate=config.sample_rate, peak=config.peak)
        if label == 1:
            b = render(song, random_transform(rng, config), config.sample_rate, config.peak, rng)
        else:
            other = random_song(rng, float(rng.uniform(*config.duration)))
            b = render(other, sample_rate=config.sample_rate, peak=config.peak)
        rel_a = os.path.join("audio", f"{pid}_a.wav")
        rel_b = os.path.join("audio", f"{pid}_b.wav")
        write_wav(os.path.join(out_dir, rel_a), a, config.sample_rate)
        write_wav(os.path.join(out_dir, rel_b), b, config.sample_rate)
        entries.append(ManifestEntry(pid, rel_a, rel_b, label))
    manifest = Manifest(entries, root=os.path.abspath(out_dir))
    write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest
