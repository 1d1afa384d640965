"""Shared builders for synthetic audio, feature rows, and training corpora.

Everything here is deterministic under an explicit seed so tests can assert
exact values and reruns stay byte-identical.
"""
from __future__ import annotations

import struct

import numpy as np

from synthspeaker.dataset import MfccDataset, serialize_row

N_COEFFS = 26


def pcm16_wav_bytes(samples, sample_rate: int = 16000, channels: int = 1) -> bytes:
    """Encode float samples in [-1, 1) as a canonical PCM16 RIFF/WAVE stream.

    Independent reference encoder used to exercise the decoder; it shares no
    code with the module under test.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if channels == 2 and samples.ndim == 1:
        samples = np.stack([samples, samples], axis=1)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    byte_rate = sample_rate * channels * 2
    block_align = channels * 2
    fmt = struct.pack("<HHIIHH", 1, channels, sample_rate, byte_rate, block_align, 16)
    body = (
        b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def indexed_gaussian_rows(n_rows: int, seed: int = 42,
                          spread_lo: float = 0.0005,
                          spread_hi: float = 0.002) -> str:
    """Serialized rows from a two-component Gaussian feature distribution.

    Coefficient k sits near magnitude k + 1/4 or k + 3/4 (the two components)
    with alternating sign, so every column occupies its own value range the
    way real cepstral coefficients fall off by index.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(N_COEFFS, dtype=np.float64)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    mu = np.stack([(k + 0.25) * sign, (k + 0.75) * sign])
    sd = rng.uniform(spread_lo, spread_hi, size=N_COEFFS)
    rows = []
    for _ in range(n_rows):
        component = rng.integers(0, 2)
        rows.append(serialize_row(mu[component] + rng.normal(size=N_COEFFS) * sd, 1))
    return "".join(rows)


def gaussian_speaker(mu, sd, n_rows: int, label: int, seed: int) -> MfccDataset:
    """Feature rows drawn from one Gaussian cluster, as an in-memory dataset."""
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    features = mu + rng.normal(size=(n_rows, N_COEFFS)) * sd
    labels = np.full(n_rows, label, dtype=np.int64)
    provenance = np.full(n_rows, "fixture", dtype="<U16")
    return MfccDataset(features, labels, provenance)


def separable_pair(n_pos: int, n_neg: int, seed: int = 7,
                   gap: float = 3.0) -> MfccDataset:
    """A positive and a negative cluster far enough apart to classify cleanly."""
    rng = np.random.default_rng(seed)
    center = rng.uniform(-2.0, 2.0, size=N_COEFFS)
    offset = rng.choice([-1.0, 1.0], size=N_COEFFS) * gap
    pos = gaussian_speaker(center, np.full(N_COEFFS, 0.8), n_pos, 1, seed + 1)
    neg = gaussian_speaker(center + offset, np.full(N_COEFFS, 0.8), n_neg, 0, seed + 2)
    return MfccDataset.concat(pos, neg)
