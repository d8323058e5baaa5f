"""Speech feature extraction: MFCC, mel power spectrogram and prosody.

All extractors work on :class:`~gesturegen.wav.AudioBuffer` and return
:class:`FeatureSequence` objects at their native analysis rate. Use
:func:`extract_features` to get any feature kind at the 20 fps motion rate.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .wav import AudioBuffer

LOG_FLOOR = 1e-10
LOW_HZ = 20.0
HIGH_HZ = 8000.0

MFCC_WINDOW_S = 0.02
MFCC_HOP_S = 0.01
MFCC_FILTERS = 40
MFCC_COEFFS = 26

SPEC_WINDOW_S = 0.005
SPEC_HOP_S = 0.005
SPEC_BANDS = 64

PROSODY_HOP_S = 0.005
PITCH_WINDOW_S = 0.04
PITCH_MIN_HZ = 60.0
PITCH_MAX_HZ = 400.0
VOICING_THRESHOLD = 0.45
# candidate peaks within this fraction of the best one win if they have a shorter lag
OCTAVE_TOLERANCE = 0.9

MOTION_FPS = 20.0


class FeatureKind(str, enum.Enum):
    MFCC = "mfcc"
    SPECTROGRAM = "spectrogram"
    PROSODIC = "prosodic"
    MFCC_PROS = "mfcc+pros"
    SPECTR_PROS = "spectr+pros"

    @property
    def dims(self) -> int:
        return FEATURE_DIMS[self]


FEATURE_DIMS = {
    FeatureKind.MFCC: 26,
    FeatureKind.SPECTROGRAM: 64,
    FeatureKind.PROSODIC: 4,
    FeatureKind.MFCC_PROS: 30,
    FeatureKind.SPECTR_PROS: 68,
}

_COMBINATIONS = {
    (FeatureKind.MFCC, FeatureKind.PROSODIC): FeatureKind.MFCC_PROS,
    (FeatureKind.SPECTROGRAM, FeatureKind.PROSODIC): FeatureKind.SPECTR_PROS,
}


class AudioTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major feature matrix (T x D) sampled at ``fps``."""

    data: np.ndarray
    fps: float
    kind: FeatureKind

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        kind = FeatureKind(self.kind)
        if data.ndim != 2:
            raise ValueError("feature data must be a T x D matrix")
        if data.shape[1] != kind.dims:
            raise ValueError(f"{kind.value} features need {kind.dims} dims, got {data.shape[1]}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


# -- spectral machinery ------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@dataclass(frozen=True)
class MelFilterbank:
    n_filters: int
    low_hz: float
    high_hz: float
    n_fft: int
    sample_rate: int
    weights: np.ndarray  # n_filters x (n_fft // 2 + 1)


def mel_filterbank(
    n_filters: int,
    n_fft: int,
    sample_rate: int,
    low_hz: float = LOW_HZ,
    high_hz: float = HIGH_HZ,
) -> MelFilterbank:
    """Triangular filters equally spaced on the mel scale.

    Weights are the triangle evaluated at each bin's centre frequency, so
    bins outside ``[low_hz, high_hz]`` get exactly zero weight.
    """
    high_hz = min(high_hz, sample_rate / 2.0)
    if not 0 <= low_hz < high_hz:
        raise ValueError("invalid filterbank band edges")
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (centre - left)
    falling = (right - freqs) / (right - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights[:, (freqs < low_hz) | (freqs > high_hz)] = 0.0
    return MelFilterbank(n_filters, float(low_hz), float(high_hz), n_fft, sample_rate, weights)


def fft_size(window: int, n_filters: int, sample_rate: int) -> int:
    """Smallest power of two >= ``window`` that gives every mel filter a bin.

    Short windows (the 5 ms spectrogram) would otherwise leave the narrow
    low-frequency filters empty; the extra resolution comes from zero-padding.
    """
    n_fft = next_pow2(window)
    while True:
        fb = mel_filterbank(n_filters, n_fft, sample_rate)
        if np.all(fb.weights.max(axis=1) > 0) or n_fft >= 1 << 16:
            return n_fft
        n_fft *= 2


def _frame_params(audio: AudioBuffer, window_s: float, hop_s: float) -> tuple[int, int, int]:
    win = int(round(window_s * audio.sample_rate))
    hop = int(round(hop_s * audio.sample_rate))
    if win < 2:
        raise ValueError("window must span at least two samples")
    if hop < 1:
        raise ValueError("hop must be positive")
    n = len(audio.samples)
    if n < win:
        raise AudioTooShortError(f"audio has {n} samples, shorter than one {win}-sample window")
    return win, hop, (n - win) // hop + 1


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = (len(x) - win) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]


def hann(win: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)


def stft_power(
    audio: AudioBuffer, window_s: float, hop_s: float, n_fft: int | None = None
) -> np.ndarray:
    """Hann-windowed power spectrogram, shape (frames, n_fft // 2 + 1).

    ``n_fft`` defaults to the next power of two >= the window length.
    """
    win, hop, _ = _frame_params(audio, window_s, hop_s)
    if n_fft is None:
        n_fft = next_pow2(win)
    if n_fft < win:
        raise ValueError("n_fft shorter than the window")
    frames = frame_signal(audio.samples, win, hop) * hann(win)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return spec.real**2 + spec.imag**2


def _log_mel(audio: AudioBuffer, window_s: float, hop_s: float, n_filters: int) -> np.ndarray:
    win = int(round(window_s * audio.sample_rate))
    n_fft = fft_size(win, n_filters, audio.sample_rate)
    power = stft_power(audio, window_s, hop_s, n_fft)
    fb = mel_filterbank(n_filters, n_fft, audio.sample_rate)
    return np.log(np.maximum(power @ fb.weights.T, LOG_FLOOR))


def mfcc(audio: AudioBuffer) -> FeatureSequence:
    """26 MFCCs (c0 kept) from 20 ms Hann frames every 10 ms, 40 mel filters."""
    log_mel = _log_mel(audio, MFCC_WINDOW_S, MFCC_HOP_S, MFCC_FILTERS)
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, :MFCC_COEFFS]
    return FeatureSequence(coeffs, 1.0 / MFCC_HOP_S, FeatureKind.MFCC)


def spectrogram64(audio: AudioBuffer) -> FeatureSequence:
    """64 mel-spaced log-power bands over 20-8000 Hz, 5 ms window and hop."""
    log_mel = _log_mel(audio, SPEC_WINDOW_S, SPEC_HOP_S, SPEC_BANDS)
    return FeatureSequence(log_mel, 1.0 / SPEC_HOP_S, FeatureKind.SPECTROGRAM)


# -- prosody -----------------------------------------------------------------


def _prosody_frames(audio: AudioBuffer, hop_s: float) -> tuple[int, int]:
    hop = int(round(hop_s * audio.sample_rate))
    n = len(audio.samples)
    if n < int(round(PITCH_WINDOW_S * audio.sample_rate)):
        raise AudioTooShortError(f"pitch tracking needs at least {PITCH_WINDOW_S * 1000:.0f} ms of audio")
    return hop, (n - hop) // hop + 1


def nccf(segments: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of each row for lags 0..max_lag.

    ``r[tau] = sum s[n] s[n+tau] / sqrt(sum_head s^2 * sum_tail s^2)`` with
    both energies taken over the overlapping part only.
    """
    segments = np.atleast_2d(segments)
    w = segments.shape[1]
    n_fft = next_pow2(2 * w)
    spec = np.fft.rfft(segments, n=n_fft, axis=1)
    ac = np.fft.irfft(spec.real**2 + spec.imag**2, n=n_fft, axis=1)[:, : max_lag + 1]
    sq = segments**2
    csum = np.concatenate([np.zeros((sq.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, w - lags]
    tail = csum[:, -1:] - csum[:, lags]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-12, ac / denom, 0.0)
    return r


def _pick_pitch(r: np.ndarray, lag_min: int, lag_max: int, sample_rate: int) -> float:
    """F0 from one NCCF row, 0.0 if unvoiced."""
    inner = np.arange(lag_min, lag_max + 1)
    mid = r[inner]
    peaks = inner[(mid > r[inner - 1]) & (mid >= r[inner + 1])]
    if peaks.size == 0:
        return 0.0
    best = r[peaks].max()
    if best < VOICING_THRESHOLD:
        return 0.0
    tau = int(peaks[np.argmax(r[peaks] >= OCTAVE_TOLERANCE * best)])
    a, b, c = r[tau - 1], r[tau], r[tau + 1]
    curvature = a - 2.0 * b + c
    shift = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
    f0 = sample_rate / (tau + float(np.clip(shift, -0.5, 0.5)))
    return float(np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ))


def f0_contour(audio: AudioBuffer, hop_s: float = PROSODY_HOP_S) -> np.ndarray:
    """Per-frame F0 in Hz (0 = unvoiced) from normalized autocorrelation.

    Frame ``i`` is centred on sample ``i*hop + hop/2`` and analysed over a
    40 ms window (clamped to stay inside the signal). Lags are searched over
    60-400 Hz; frames whose best peak is below 0.45 are unvoiced.
    """
    sr = audio.sample_rate
    hop, n_frames = _prosody_frames(audio, hop_s)
    x = audio.samples
    w = int(round(PITCH_WINDOW_S * sr))
    lag_min = max(2, int(np.floor(sr / PITCH_MAX_HZ)))
    lag_max = int(np.ceil(sr / PITCH_MIN_HZ))
    if lag_max + 2 >= w:
        raise ValueError("sample rate too low for the pitch search range")
    centres = np.arange(n_frames) * hop + hop // 2
    starts = np.clip(centres - w // 2, 0, len(x) - w)
    f0 = np.zeros(n_frames)
    block = 512
    offsets = np.arange(w)
    for b0 in range(0, n_frames, block):
        idx = starts[b0 : b0 + block]
        segs = x[idx[:, None] + offsets]
        r = nccf(segs, lag_max + 1)
        loud = np.mean(segs**2, axis=1) > 1e-10
        for k in np.flatnonzero(loud):
            f0[b0 + k] = _pick_pitch(r[k], lag_min, lag_max, sr)
    return f0


def frame_intensity(audio: AudioBuffer, hop_s: float = PROSODY_HOP_S) -> np.ndarray:
    """RMS amplitude of consecutive non-overlapping ``hop_s`` frames."""
    hop, _ = _prosody_frames(audio, hop_s)
    frames = frame_signal(audio.samples, hop, hop)
    return np.sqrt(np.mean(frames**2, axis=1))


def adjust_pitch(f0):
    """log(F0 + 1) - 4, negative values clamped to zero."""
    return np.maximum(np.log(np.asarray(f0, dtype=np.float64) + 1.0) - 4.0, 0.0)


def adjust_intensity(x):
    """log(x) - 3 with x floored at 1e-10."""
    return np.log(np.maximum(np.asarray(x, dtype=np.float64), LOG_FLOOR)) - 3.0


def forward_delta(v: np.ndarray) -> np.ndarray:
    """v[t+1] - v[t]; the last frame repeats the previous difference."""
    v = np.asarray(v, dtype=np.float64)
    if len(v) < 2:
        return np.zeros_like(v)
    d = np.empty_like(v)
    d[:-1] = v[1:] - v[:-1]
    d[-1] = d[-2]
    return d


def prosodic_features(audio: AudioBuffer) -> FeatureSequence:
    """[energy, d energy, log F0, d log F0] at 200 fps."""
    energy = adjust_intensity(frame_intensity(audio))
    pitch = adjust_pitch(f0_contour(audio))
    data = np.column_stack([energy, forward_delta(energy), pitch, forward_delta(pitch)])
    return FeatureSequence(data, 1.0 / PROSODY_HOP_S, FeatureKind.PROSODIC)


# -- sequence utilities ------------------------------------------------------


def downsample_avg(fs: FeatureSequence, factor: int) -> FeatureSequence:
    """Replace each block of ``factor`` frames by its mean.

    A trailing partial block is averaged over its actual length.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    t = len(fs)
    if t == 0:
        raise ValueError("cannot downsample an empty sequence")
    starts = np.arange(0, t, factor)
    sums = np.add.reduceat(fs.data, starts, axis=0)
    counts = np.minimum(starts + factor, t) - starts
    return FeatureSequence(sums / counts[:, None], fs.fps / factor, fs.kind)


def combine(a: FeatureSequence, b: FeatureSequence) -> FeatureSequence:
    """Per-frame concatenation of spectral features with prosody."""
    kind = _COMBINATIONS.get((a.kind, b.kind))
    if kind is None:
        raise ValueError(f"cannot combine {a.kind.value} with {b.kind.value}")
    if len(a) != len(b):
        raise ValueError(f"frame count mismatch: {len(a)} vs {len(b)}")
    if a.fps != b.fps:
        raise ValueError(f"fps mismatch: {a.fps} vs {b.fps}")
    return FeatureSequence(np.hstack([a.data, b.data]), a.fps, kind)


def _at_motion_rate(fs: FeatureSequence, target_fps: float) -> FeatureSequence:
    factor = fs.fps / target_fps
    if abs(factor - round(factor)) > 1e-9:
        raise ValueError(f"{fs.fps} fps is not an integer multiple of {target_fps}")
    return downsample_avg(fs, int(round(factor)))


def extract_features(
    audio: AudioBuffer, kind: FeatureKind | str, target_fps: float = MOTION_FPS
) -> FeatureSequence:
    """Extract ``kind`` features and average them down to ``target_fps``."""
    kind = FeatureKind(kind)
    if kind is FeatureKind.MFCC:
        return _at_motion_rate(mfcc(audio), target_fps)
    if kind is FeatureKind.SPECTROGRAM:
        return _at_motion_rate(spectrogram64(audio), target_fps)
    if kind is FeatureKind.PROSODIC:
        return _at_motion_rate(prosodic_features(audio), target_fps)
    spectral = extract_features(
        audio, FeatureKind.MFCC if kind is FeatureKind.MFCC_PROS else FeatureKind.SPECTROGRAM, target_fps
    )
    pros = extract_features(audio, FeatureKind.PROSODIC, target_fps)
    # different analysis windows can leave the streams one frame apart
    t = min(len(spectral), len(pros))
    spectral = FeatureSequence(spectral.data[:t], spectral.fps, spectral.kind)
    pros = FeatureSequence(pros.data[:t], pros.fps, pros.kind)
    return combine(spectral, pros)


# -- CSV I/O -----------------------------------------------------------------


def write_features_csv(path: str | os.PathLike, fs: FeatureSequence, extra_header: dict | None = None) -> None:
    lines = [f"# kind={fs.kind.value} fps={fs.fps:g} dims={fs.dims}"]
    if extra_header:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in extra_header.items()))
    lines.extend(",".join(f"{v:.17g}" for v in row) for row in fs.data)
    Path(path).write_text("\n".join(lines) + "\n")


def read_features_csv(path: str | os.PathLike) -> FeatureSequence:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing feature header")
    meta = dict(tok.split("=", 1) for tok in text[0][1:].split())
    rows = [line for line in text[1:] if line and not line.startswith("#")]
    dims = int(meta["dims"])
    data = np.array([[float(v) for v in r.split(",")] for r in rows]).reshape(len(rows), dims)
    return FeatureSequence(data, float(meta["fps"]), FeatureKind(meta["kind"]))
