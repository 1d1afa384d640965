"""Mel-frequency cepstral coefficients from analysis frames.

Pipeline per frame: zero-padded power spectrum, triangular mel filterbank,
floored natural log, and an unnormalized type-II cosine transform:

    X_k = sum_{n=0}^{N-1} x_n * cos[(pi / N) * (n + 1/2) * k]

No pre-emphasis, no tapered window, no liftering: frames go in raw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Frame
from .errors import ConfigError, DomainError, ShapeError

N_COEFFICIENTS = 26
LOG_FLOOR = 1e-12
DEFAULT_NFFT = 512


def hz_to_mel(hz):
    """Map frequency in Hz to mel; accepts scalars or arrays, domain f >= 0."""
    arr = np.asarray(hz, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"frequency must be non-negative, got {hz}")
    out = 2595.0 * np.log10(1.0 + arr / 700.0)
    return float(out) if np.isscalar(hz) or arr.ndim == 0 else out


def mel_to_hz(mel):
    """Inverse of hz_to_mel; domain m >= 0."""
    arr = np.asarray(mel, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"mel value must be non-negative, got {mel}")
    out = 700.0 * (np.power(10.0, arr / 2595.0) - 1.0)
    return float(out) if np.isscalar(mel) or arr.ndim == 0 else out


def power_spectrum(frame, nfft: int = DEFAULT_NFFT) -> np.ndarray:
    """Squared-magnitude spectrum of a frame, scaled by 1/nfft.

    Returns nfft//2 + 1 bins. The frame is zero-padded to nfft; frames
    longer than nfft are refused rather than silently truncated.
    """
    samples = frame.samples if isinstance(frame, Frame) else np.asarray(frame)
    if nfft < 1:
        raise ConfigError(f"nfft must be positive, got {nfft}")
    if len(samples) > nfft:
        raise ConfigError(
            f"frame of {len(samples)} samples does not fit nfft={nfft}"
        )
    spec = np.fft.rfft(samples, n=nfft)
    return (spec.real**2 + spec.imag**2) / nfft


@dataclass
class MelFilterbank:
    """Triangular filters over power-spectrum bins, plus the grid they came from."""

    filters: np.ndarray  # [n_filters, nfft//2 + 1], weights in [0, 1]
    sample_rate: int
    nfft: int
    bin_edges: np.ndarray  # [n_filters + 2] FFT bin indices
    hz_edges: np.ndarray
    mel_edges: np.ndarray


def build_filterbank(
    n_filters: int = N_COEFFICIENTS,
    nfft: int = DEFAULT_NFFT,
    sample_rate: int = 16000,
    f_low: float = 0.0,
    f_high: float | None = None,
) -> MelFilterbank:
    """Build n_filters triangular filters spaced evenly on the mel scale.

    Edge frequencies are n_filters + 2 mel-uniform points mapped back to Hz
    and then to FFT bin indices. Each filter rises from edge m to a peak of
    exactly 1.0 at edge m+1 and falls to zero at edge m+2.
    """
    if n_filters < 1:
        raise ConfigError(f"need at least one filter, got {n_filters}")
    if f_high is None:
        f_high = sample_rate / 2.0
    if not (0 <= f_low < f_high <= sample_rate / 2.0):
        raise ConfigError(
            f"band [{f_low}, {f_high}] invalid for Nyquist {sample_rate / 2.0}"
        )

    mel_edges = np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_filters + 2)
    hz_edges = mel_to_hz(mel_edges)
    bin_edges = np.floor((nfft + 1) * hz_edges / sample_rate).astype(np.int64)

    if np.any(np.diff(bin_edges) < 1):
        raise ConfigError(
            f"{n_filters} filters collapse onto shared bins at nfft={nfft}, "
            f"rate={sample_rate}: increase nfft or reduce n_filters"
        )

    n_bins = nfft // 2 + 1
    filters = np.zeros((n_filters, n_bins))
    for m in range(n_filters):
        lo, mid, hi = bin_edges[m], bin_edges[m + 1], bin_edges[m + 2]
        for k in range(lo, mid):
            filters[m, k] = (k - lo) / (mid - lo)
        for k in range(mid, min(hi, n_bins - 1) + 1):
            filters[m, k] = (hi - k) / (hi - mid)
    return MelFilterbank(
        filters=filters,
        sample_rate=sample_rate,
        nfft=nfft,
        bin_edges=bin_edges,
        hz_edges=hz_edges,
        mel_edges=mel_edges,
    )


_DCT_CACHE: dict[int, np.ndarray] = {}


def dct_ii(x: np.ndarray) -> np.ndarray:
    """Unnormalized type-II cosine transform, same length as the input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ShapeError(f"dct_ii expects a non-empty vector, got shape {x.shape}")
    n = len(x)
    basis = _DCT_CACHE.get(n)
    if basis is None:
        k = np.arange(n).reshape(-1, 1)
        m = np.arange(n).reshape(1, -1)
        basis = np.cos(np.pi / n * (m + 0.5) * k)
        _DCT_CACHE[n] = basis
    return basis @ x


def extract_mfcc(frame: Frame, fb: MelFilterbank) -> np.ndarray:
    """26 cepstral coefficients for one frame.

    Filter energies are floored at 1e-12 before the log so silent frames
    yield large negative coefficients instead of -inf.
    """
    if isinstance(frame, Frame) and frame.sample_rate != fb.sample_rate:
        raise ConfigError(
            f"frame rate {frame.sample_rate} != filterbank rate {fb.sample_rate}"
        )
    ps = power_spectrum(frame, nfft=fb.nfft)
    energies = fb.filters @ ps
    coeffs = dct_ii(np.log(np.maximum(energies, LOG_FLOOR)))
    return coeffs


def extract_clip(clip, fb: MelFilterbank, window_s: float = 0.025, step_s: float = 0.010):
    """Frame a clip and extract one coefficient row per frame -> [n, 26]."""
    from .audio import frame_signal

    frames = frame_signal(clip, window_s=window_s, step_s=step_s)
    return np.stack([extract_mfcc(f, fb) for f in frames])
