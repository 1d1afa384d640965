"""WAV decoding, resampling, and sliding-window framing.

Decodes RIFF/WAVE PCM16 byte streams directly (mono or stereo), converts to
float64 samples in [-1, 1), and cuts clips into overlapping analysis frames.
Every decode failure names the header field that broke.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DecodeError, DomainError, EmptyInputError

CANONICAL_RATE = 16000


@dataclass
class AudioClip:
    """Mono float64 samples at a known rate."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Frame:
    """One analysis window cut from a clip."""

    samples: np.ndarray
    start_index: int
    sample_rate: int


def decode_wav(data: bytes) -> AudioClip:
    """Decode a RIFF/WAVE PCM16 byte stream into an AudioClip."""
    if len(data) < 12:
        raise DecodeError("RIFF header truncated: need at least 12 bytes")
    if data[0:4] != b"RIFF":
        raise DecodeError(f"chunk id: expected b'RIFF', got {data[0:4]!r}")
    if data[8:12] != b"WAVE":
        raise DecodeError(f"format id: expected b'WAVE', got {data[8:12]!r}")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise DecodeError(f"chunk {cid!r}: declared {size} bytes, stream has {len(body)}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise DecodeError("fmt chunk: missing")
    if payload is None:
        raise DecodeError("data chunk: missing")
    if len(fmt) < 16:
        raise DecodeError(f"fmt chunk: need 16 bytes, got {len(fmt)}")

    audio_format, channels, rate, _byte_rate, _align, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0
    )
    if audio_format != 1:
        raise DecodeError(f"audio format tag: expected 1 (PCM), got {audio_format}")
    if channels not in (1, 2):
        raise DecodeError(f"channel count: expected 1 or 2, got {channels}")
    if bits != 16:
        raise DecodeError(f"bits per sample: expected 16, got {bits}")
    if rate <= 0:
        raise DecodeError(f"sample rate: expected positive, got {rate}")
    if len(payload) == 0:
        raise DecodeError("data chunk: empty")
    if len(payload) % (2 * channels) != 0:
        raise DecodeError(
            f"data chunk: {len(payload)} bytes is not a whole number of "
            f"{channels}-channel 16-bit frames"
        )

    pcm = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=pcm, sample_rate=int(rate))


def read_audio(path) -> AudioClip:
    """Read a PCM16 WAV file from disk."""
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resample; identical rates return the clip unchanged."""
    if target_rate <= 0:
        raise DomainError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_src = len(clip.samples)
    n_out = int(round(n_src * target_rate / clip.sample_rate))
    if n_out == 0:
        return AudioClip(samples=np.zeros(0), sample_rate=target_rate)
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n_src), clip.samples)
    return AudioClip(samples=out, sample_rate=target_rate)


def trim_silence(clip: AudioClip, threshold: float = 1e-3) -> AudioClip:
    """Drop leading/trailing samples below an absolute amplitude threshold."""
    if threshold < 0:
        raise DomainError(f"threshold must be non-negative, got {threshold}")
    loud = np.flatnonzero(np.abs(clip.samples) >= threshold)
    if len(loud) == 0:
        return AudioClip(samples=clip.samples[:0], sample_rate=clip.sample_rate)
    return AudioClip(
        samples=clip.samples[loud[0] : loud[-1] + 1], sample_rate=clip.sample_rate
    )


def frame_signal(
    clip: AudioClip, window_s: float = 0.025, step_s: float = 0.010
) -> list[Frame]:
    """Cut a clip into overlapping frames of window_s seconds every step_s.

    The tail that does not fill a whole window is dropped.
    """
    if window_s <= 0 or step_s <= 0:
        raise ConfigError(
            f"window and step must be positive, got window={window_s} step={step_s}"
        )
    width = int(round(window_s * clip.sample_rate))
    hop = int(round(step_s * clip.sample_rate))
    if width < 1 or hop < 1:
        raise ConfigError(
            f"window/step too short for rate {clip.sample_rate}: "
            f"{width} and {hop} samples"
        )
    n = len(clip.samples)
    if n < width:
        raise EmptyInputError(
            f"clip has {n} samples, shorter than one {width}-sample window"
        )
    count = 1 + (n - width) // hop
    return [
        Frame(
            samples=clip.samples[i * hop : i * hop + width],
            start_index=i * hop,
            sample_rate=clip.sample_rate,
        )
        for i in range(count)
    ]
