"""Band-pass compression of raw 10,000-sample records to 158-sample sequences.

The raw record is Fourier transformed, only the bins inside the excitation band
are kept, and those coefficients are moved down to bins 1..96 of a 192-sample
real sequence (a frequency shift that keeps the envelope timing).  Samples
before the first possible arrival are dropped and the mean of what remains is
removed, so no zero-frequency content survives.
"""
from __future__ import annotations

import numpy as np

from .config import PlateConfig

_DEFAULT = PlateConfig()


def band_bins(plate: PlateConfig = _DEFAULT) -> tuple[int, int]:
    """[start, stop) rfft bins of a raw record that survive compression."""
    df_khz = 1.0 / plate.duration_ms
    start = int(round(plate.band_khz[0] / df_khz))
    n_keep = plate.compressed_length // 2
    return start, start + n_keep


def compress_full(x: np.ndarray, plate: PlateConfig = _DEFAULT) -> np.ndarray:
    """Band-pass and resample along the last axis, before trimming: (..., 10000) -> (..., 192)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != plate.n_samples:
        raise ValueError(f"expected {plate.n_samples} raw samples, got {x.shape[-1]}")
    start, stop = band_bins(plate)
    spec = np.fft.rfft(x, axis=-1)
    n = plate.compressed_length
    shifted = np.zeros(x.shape[:-1] + (n // 2 + 1,), dtype=np.complex128)
    shifted[..., 1:1 + stop - start] = spec[..., start:stop]
    return np.fft.irfft(shifted, n, axis=-1) * (n / plate.n_samples)


def compress(x: np.ndarray, plate: PlateConfig = _DEFAULT) -> np.ndarray:
    """Raw record(s) (..., 10000) -> compressed, trimmed, zero-mean (..., 158)."""
    y = compress_full(x, plate)[..., plate.trim:]
    return y - y.mean(axis=-1, keepdims=True)
