"""Outlier filters applied before training.

Each filter scores every location, flags scores above ``threshold * median``
and removes the flagged locations.  Filters run in order (generated-signal
spectrum, received-signal distance, post-subtraction amplitude); later filters
see only what earlier ones kept.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, subtracted

log = logging.getLogger(__name__)

_DIAG = np.arange(4)
_OFF = ~np.eye(4, dtype=bool)


@dataclass(frozen=True)
class CurationThresholds:
    spectral: float = 10.0
    received: float = 4.0
    amplitude: float = 4.0


def spectral_scores(ds: Dataset) -> np.ndarray:
    """Worst per-transducer distance of the generated-wave spectral amplitude from the fleet mean.

    Uses ``ds.generated`` when present, else the (trimmed) self-interaction records.
    """
    gen = ds.generated if ds.generated is not None else ds.signals[:, _DIAG, _DIAG, :]
    amp = np.abs(np.fft.rfft(gen, axis=-1))
    mean = amp.mean(axis=0, keepdims=True)
    dist = np.linalg.norm(amp - mean, axis=-1) / np.linalg.norm(mean, axis=-1)
    return dist.max(axis=1)


def received_scores(ds: Dataset) -> np.ndarray:
    """Worst per-path Euclidean distance of unit-norm received records from the path mean.

    Records are normalised first so this filter judges waveform shape; gross
    amplitude faults are left to the amplitude filter.
    """
    rec = ds.signals[:, _OFF]                                  # (N, 12, T)
    rec = rec / np.maximum(np.linalg.norm(rec, axis=-1, keepdims=True), 1e-300)
    mean = rec.mean(axis=0, keepdims=True)
    mean = mean / np.linalg.norm(mean, axis=-1, keepdims=True)
    return np.linalg.norm(rec - mean, axis=-1).max(axis=1)


def amplitude_scores(ds: Dataset) -> np.ndarray:
    """Largest absolute off-diagonal value after subtracting each baseline."""
    if ds.baselines.shape[0] == 0:
        return np.abs(ds.signals[:, _OFF]).max(axis=(1, 2))
    sub = subtracted(ds)                                       # (N, M, 4, 4, T)
    return np.abs(sub[:, :, _OFF]).max(axis=(1, 2, 3))


FILTERS = (("spectral", spectral_scores), ("received", received_scores), ("amplitude", amplitude_scores))


def curate(ds: Dataset, thresholds: CurationThresholds | None = None) -> Dataset:
    thresholds = thresholds or CurationThresholds()
    out = ds
    for name, scorer in FILTERS:
        tau = getattr(thresholds, name)
        if len(out) == 0 or math.isinf(tau):
            out.curation_log.append({"filter": name, "threshold": tau, "removed": 0, "location_ids": []})
            continue
        scores = scorer(out)
        limit = tau * float(np.median(scores))
        bad = scores > limit
        removed = out.location_ids[bad].tolist()
        log.info("curation filter %s removed %d of %d locations", name, len(removed), len(out))
        kept = out.subset(np.flatnonzero(~bad))
        kept.curation_log.append({"filter": name, "threshold": tau, "removed": len(removed),
                                  "location_ids": removed})
        out = kept
    if len(out) == 0:
        log.warning("curation removed every location")
    return out
