"""Minimal RIFF/WAVE PCM reader and writer.

Supports 8/16/24/32-bit integer PCM and 32/64-bit IEEE float, mono or
multichannel (channels are averaged to mono on load).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class EmptyAudioError(WavError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform in [-1, 1] with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer samples must be 1-D")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise MalformedWavError("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedWavError("WAVE_FORMAT_EXTENSIBLE fmt chunk truncated")
        # first two bytes of the SubFormat GUID carry the actual format tag
        tag = struct.unpack("<H", body[24:26])[0]
    if channels == 0:
        raise MalformedWavError("fmt chunk declares zero channels")
    if rate == 0:
        raise MalformedWavError("fmt chunk declares zero sample rate")
    return tag, channels, rate, bits


def _decode(data: bytes, tag: int, channels: int, bits: int) -> np.ndarray:
    width = bits // 8
    if bits % 8 or width == 0:
        raise UnsupportedCodecError(f"unsupported bit depth {bits}")
    frame = width * channels
    n = len(data) // frame
    data = data[: n * frame]
    if tag == WAVE_FORMAT_PCM:
        if width == 1:
            x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif width == 2:
            x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
        elif width == 3:
            raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v.astype(np.float64) / float(1 << 23)
        elif width == 4:
            x = np.frombuffer(data, dtype="<i4").astype(np.float64) / float(1 << 31)
        else:
            raise UnsupportedCodecError(f"unsupported PCM width {bits} bits")
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if width == 4:
            x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        elif width == 8:
            x = np.frombuffer(data, dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedCodecError(f"unsupported float width {bits} bits")
    else:
        raise UnsupportedCodecError(f"unsupported WAV format tag 0x{tag:04x}")
    return x.reshape(-1, channels)


def decode_wav(blob: bytes) -> AudioBuffer:
    """Decode an in-memory WAV file."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWavError("missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        size = struct.unpack("<I", blob[pos + 4 : pos + 8])[0]
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError("no fmt chunk")
    if data is None:
        raise MalformedWavError("no data chunk")
    tag, channels, rate, bits = fmt
    frames = _decode(data, tag, channels, bits)
    if frames.shape[0] == 0:
        raise EmptyAudioError("WAV file contains no samples")
    mono = frames.mean(axis=1) if channels > 1 else frames[:, 0].copy()
    if not np.all(np.isfinite(mono)):
        raise MalformedWavError("non-finite float samples")
    return AudioBuffer(mono, rate)


def load_wav(path: str | os.PathLike) -> AudioBuffer:
    return decode_wav(Path(path).read_bytes())


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round to the int16 grid used by :func:`write_wav`."""
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path: str | os.PathLike, audio: AudioBuffer) -> None:
    """Write 16-bit mono PCM. Samples are scaled by 32768 and clipped."""
    pcm = quantize_pcm16(audio.samples).astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        WAVE_FORMAT_PCM,
        1,
        audio.sample_rate,
        audio.sample_rate * 2,
        2,
        16,
        b"data",
        len(pcm),
    )
    Path(path).write_bytes(header + pcm)
