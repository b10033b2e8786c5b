"""Audio decoding, resampling, framing and magnitude spectrograms.

Every track is brought to one canonical form before any feature is computed:
mono, 16 kHz, float64 samples in [-1, 1].  Frames are 40 ms (640 samples)
with a 320-sample hop, and each frame is turned into a 1024-bin magnitude
spectrum by a Hann-windowed, zero-padded 2048-point FFT from which the
Nyquist bin is dropped.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.io.wavfile
import scipy.signal

logger = logging.getLogger(__name__)

TARGET_RATE = 16000
FRAME_LEN = 640
HOP = 320
N_FFT = 2048
N_BINS = 1024

MIN_RATE = 8000
MAX_RATE = 96000

# Kaiser beta 8.6 gives roughly 86 dB of stopband attenuation.
RESAMPLE_WINDOW = ("kaiser", 8.6)


class AudioError(ValueError):
    """Raised for unreadable, unsupported or otherwise unusable audio."""


@dataclass(frozen=True)
class SpectrogramConfig:
    """Framing and transform parameters.

    The defaults realize 1024-dimensional spectra from 40 ms frames; they are
    exposed so that alternative layouts can be tried without code changes.
    """

    sample_rate: int = TARGET_RATE
    frame_len: int = FRAME_LEN
    hop: int = HOP
    n_fft: int = N_FFT
    n_bins: int = N_BINS
    window: str = "hann"

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.n_fft


@dataclass
class AudioTrack:
    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("AudioTrack samples must be one-dimensional (mono)")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError(f"non-finite samples in {self.source_path or 'track'}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FrameSet:
    frames: np.ndarray  # (T, frame_len)
    frame_len: int
    hop: int
    sample_rate: int = TARGET_RATE

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_times(self) -> np.ndarray:
        """Frame centre times in seconds."""
        starts = np.arange(len(self)) * self.hop
        return (starts + self.frame_len / 2) / self.sample_rate


@dataclass
class Spectrogram:
    """Magnitude spectrogram stored as a (bins, frames) matrix."""

    values: np.ndarray
    bin_hz: float = TARGET_RATE / N_FFT
    frame_times: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("spectrogram values must be a 2-D (bins, frames) array")
        if self.frame_times is None:
            self.frame_times = np.arange(self.values.shape[1], dtype=np.float64)

    @property
    def columns(self) -> np.ndarray:
        """Frames as rows, i.e. shape (T, bins)."""
        return self.values.T

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _to_float(data: np.ndarray) -> np.ndarray:
    kind = data.dtype
    if kind == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if kind == np.int16:
        return data.astype(np.float64) / 2.0**15
    if kind == np.int32:
        # scipy returns 24-bit PCM left-justified in int32, so one scale fits both
        return data.astype(np.float64) / 2.0**31
    if kind in (np.float32, np.float64):
        return np.clip(data.astype(np.float64), -1.0, 1.0)
    raise AudioError(f"unsupported sample type {kind}")


def decode(path) -> AudioTrack:
    """Read a PCM WAV file and return its mono, [-1, 1]-scaled samples.

    Supports 8/16/24/32-bit integer and 32-bit float data with one or two
    channels.  Stereo input is averaged to mono.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise AudioError(f"no such file: {path}")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:  # scipy raises ValueError and struct errors alike
        raise AudioError(f"cannot decode {path}: {exc}") from exc

    if data.ndim == 2:
        if data.shape[1] not in (1, 2):
            raise AudioError(f"{path}: {data.shape[1]} channels, only mono/stereo supported")
    if data.shape[0] == 0:
        raise AudioError(f"{path}: zero-length audio")

    samples = _to_float(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioTrack(samples=samples, sample_rate=int(rate), source_path=path)


def write_wav(path, samples: np.ndarray, sample_rate: int = TARGET_RATE) -> None:
    """Write samples in [-1, 1] as 16-bit PCM."""
    pcm = np.round(np.clip(samples, -1.0, 1.0 - 2.0**-15) * 2.0**15).astype("<i2")
    scipy.io.wavfile.write(os.fspath(path), sample_rate, pcm)


def resample(track: AudioTrack, target_rate: int = TARGET_RATE) -> AudioTrack:
    """Band-limited resampling to ``target_rate``.

    Uses polyphase windowed-sinc filtering (Kaiser window).  Output length is
    ``round(len * target / source)``.  A track already at the target rate is
    returned unchanged.
    """
    src = int(track.sample_rate)
    if not MIN_RATE <= src <= MAX_RATE:
        raise AudioError(f"sample rate {src} Hz outside supported range [{MIN_RATE}, {MAX_RATE}]")
    if src == target_rate:
        return AudioTrack(track.samples.copy(), src, track.source_path)

    ratio = Fraction(target_rate, src)
    out_len = int(round(len(track) * target_rate / src))
    y = scipy.signal.resample_poly(
        track.samples, ratio.numerator, ratio.denominator, window=RESAMPLE_WINDOW
    )
    if y.shape[0] >= out_len:
        y = y[:out_len]
    else:
        y = np.pad(y, (0, out_len - y.shape[0]))
    return AudioTrack(y, target_rate, track.source_path)


def frame(track: AudioTrack, frame_len: int = FRAME_LEN, hop: int = HOP) -> FrameSet:
    """Cut a track into overlapping frames; the trailing remainder is dropped."""
    n = len(track)
    if n < frame_len:
        raise AudioError(f"track has {n} samples, shorter than one {frame_len}-sample frame")
    if hop <= 0:
        raise ValueError("hop must be positive")
    count = (n - frame_len) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(track.samples, frame_len)[::hop][:count]
    return FrameSet(np.ascontiguousarray(frames), frame_len, hop, track.sample_rate)


def _window(name: str, length: int) -> np.ndarray:
    return scipy.signal.get_window(name, length, fftbins=True)


def magnitude_spectrogram(frames: FrameSet, config: SpectrogramConfig | None = None) -> Spectrogram:
    """Windowed, zero-padded FFT magnitudes for every frame.

    Returns a (n_bins, T) matrix; bins 0..n_bins-1 are kept, so with the
    defaults the Nyquist bin of the 2048-point transform is discarded.
    """
    config = config or SpectrogramConfig()
    if frames.frame_len != config.frame_len:
        raise ValueError(
            f"frame length {frames.frame_len} does not match configured {config.frame_len}"
        )
    win = _window(config.window, config.frame_len)
    spec = np.fft.rfft(frames.frames * win, n=config.n_fft, axis=1)
    mags = np.abs(spec[:, : config.n_bins])
    return Spectrogram(
        values=np.ascontiguousarray(mags.T),
        bin_hz=config.bin_hz,
        frame_times=frames.frame_times,
    )


def load_track(path, config: SpectrogramConfig | None = None) -> AudioTrack:
    """Decode and resample a file to the canonical rate."""
    config = config or SpectrogramConfig()
    return resample(decode(path), config.sample_rate)


def track_spectrogram(track: AudioTrack, config: SpectrogramConfig | None = None):
    """Frame a canonical track and compute its spectrogram.

    Returns ``(FrameSet, Spectrogram)``.
    """
    config = config or SpectrogramConfig()
    frames = frame(track, config.frame_len, config.hop)
    return frames, magnitude_spectrogram(frames, config)

