"""Datasets of compressed adjacency signals, their file format, and task-specific views."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import container
from .compress import compress, compress_full
from .config import PlateConfig, SymmetryBreakSpec, plate_from_dict, sym_from_dict, to_dict
from .synth import synthesize

log = logging.getLogger(__name__)


@dataclass
class Example:
    """One network input with its label; ``baseline_id`` is -1 for unsubtracted signals."""
    V: np.ndarray
    label: np.ndarray | float
    baseline_id: int = -1
    location_id: int = -1


@dataclass
class Dataset:
    signals: np.ndarray          # (N, 4, 4, T) compressed records with the load present
    positions: np.ndarray        # (N, 2) load centres, mm, plate-centred
    baselines: np.ndarray        # (M, 4, 4, T) compressed records without a load
    plate: PlateConfig = field(default_factory=PlateConfig)
    sym: SymmetryBreakSpec = field(default_factory=SymmetryBreakSpec)
    seed: int = 0
    location_ids: np.ndarray | None = None
    curation_log: list[dict] = field(default_factory=list)
    source: str = "synthetic"
    # (N, 4, pickup_samples): start of each untrimmed compressed self-record, before any
    # echo returns, i.e. the wave each sender generated
    generated: np.ndarray | None = None

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.baselines = np.asarray(self.baselines, dtype=np.float64)
        if self.location_ids is None:
            self.location_ids = np.arange(len(self.signals))
        self.location_ids = np.asarray(self.location_ids, dtype=np.int64)
        if self.signals.ndim != 4 or self.signals.shape[1:3] != (4, 4):
            raise ValueError(f"signals must be (N, 4, 4, T), got {self.signals.shape}")
        if len(self.positions) != len(self.signals) or len(self.location_ids) != len(self.signals):
            raise ValueError("signals, positions and location ids disagree in length")
        if self.baselines.ndim != 4 or self.baselines.shape[1:] != self.signals.shape[1:]:
            raise ValueError(f"baselines must be (M, 4, 4, {self.signals.shape[-1]})")
        if self.generated is not None:
            self.generated = np.asarray(self.generated, dtype=np.float64)
            if self.generated.shape[:2] != (len(self.signals), 4):
                raise ValueError("generated records must be (N, 4, L)")

    def __len__(self) -> int:
        return len(self.signals)

    @property
    def length(self) -> int:
        return self.signals.shape[-1]

    def subset(self, keep) -> "Dataset":
        keep = np.asarray(keep)
        return replace(self, signals=self.signals[keep], positions=self.positions[keep],
                       location_ids=self.location_ids[keep], curation_log=list(self.curation_log),
                       generated=None if self.generated is None else self.generated[keep])

    def window(self, start: int, stop: int) -> "Dataset":
        """Restrict every record to samples [start, stop)."""
        return replace(self, signals=self.signals[..., start:stop].copy(),
                       baselines=self.baselines[..., start:stop].copy(),
                       curation_log=list(self.curation_log))


def generate(plate: PlateConfig | None = None, sym: SymmetryBreakSpec | None = None, seed: int = 0,
             positions: np.ndarray | None = None, noise: float | None = None,
             progress=None) -> Dataset:
    """Synthesize and compress one record set per load position plus the baselines.

    Position ``i`` and baseline ``j`` draw noise from streams keyed by
    ``(seed, 1, i)`` and ``(seed, 0, j)``; output does not depend on generation order.
    """
    plate = plate or PlateConfig()
    sym = sym or SymmetryBreakSpec()
    if positions is None:
        positions = plate.grid_positions()
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    T = plate.output_length
    signals = np.empty((len(positions), 4, 4, T))
    generated = np.empty((len(positions), 4, plate.pickup_samples))
    diag = np.arange(4)
    for i, x in enumerate(positions):
        raw = synthesize(plate, x, sym, seed, (1, i), noise)
        signals[i] = compress(raw, plate)
        generated[i] = compress_full(raw[diag, diag], plate)[:, :plate.pickup_samples]
        if progress is not None:
            progress(i + 1, len(positions))
    baselines = np.stack([compress(synthesize(plate, None, sym, seed, (0, j), noise), plate)
                          for j in range(plate.n_baselines)]) if plate.n_baselines else np.empty((0, 4, 4, T))
    return Dataset(signals, positions, baselines, plate, sym, seed, generated=generated)


def baseline_subtract(V: np.ndarray, B: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if V.shape[-B.ndim:] != B.shape:
        raise ValueError(f"baseline shape {B.shape} does not match signal shape {V.shape}")
    return V - B


def subtracted(ds: Dataset, index=None) -> np.ndarray:
    """(n, M, 4, 4, T): each selected record minus each baseline."""
    sig = ds.signals if index is None else ds.signals[np.asarray(index)]
    return sig[:, None] - ds.baselines[None]


def localization_arrays(ds: Dataset, index=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened baseline-subtracted inputs, their targets and their row in ``ds``."""
    idx = np.arange(len(ds)) if index is None else np.asarray(index)
    X = subtracted(ds, idx)
    M = ds.baselines.shape[0]
    X = X.reshape((-1,) + X.shape[2:])
    y = np.repeat(ds.positions[idx], M, axis=0)
    group = np.repeat(idx, M)
    return X, y, group


def split(n_locations: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Partition location indices into (train, test) with round(ratio * n) training locations."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    perm = np.random.default_rng([seed, 7]).permutation(n_locations)
    n_train = int(round(ratio * n_locations))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def combine_baselines(baselines: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=np.float64)
    return np.tensordot(c, baselines, axes=(0, 0))


@dataclass
class DetectionSet:
    """Raw (unsubtracted) records with damage labels; subtract baselines at use time."""
    records: np.ndarray      # (K, 4, 4, T)
    labels: np.ndarray       # (K,) 1 = load present
    baselines: np.ndarray    # (M, 4, 4, T)
    coefficients: np.ndarray  # (K, M) mixing weights for undamaged records, zeros for damaged

    def __len__(self) -> int:
        return len(self.records)

    def inputs(self, index=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.arange(len(self)) if index is None else np.asarray(index)
        X = self.records[idx][:, None] - self.baselines[None]
        M = self.baselines.shape[0]
        return X.reshape((-1,) + X.shape[2:]), np.repeat(self.labels[idx], M), np.repeat(idx, M)


def balance_detection(ds: Dataset, seed: int = 0) -> DetectionSet:
    """Pair every damaged record with an undamaged one built from the baselines.

    Undamaged records are the baselines themselves followed by random convex
    combinations of them (uniform weights normalised to sum to one) until both
    classes have the same count.
    """
    B = ds.baselines
    M = B.shape[0]
    if M < 2:
        raise ValueError("balancing needs at least two baseline records")
    N = len(ds)
    rng = np.random.default_rng([seed, 11])
    coeffs = []
    for j in range(min(M, N)):
        c = np.zeros(M)
        c[j] = 1.0
        coeffs.append(c)
    while len(coeffs) < N:
        u = rng.random(M)
        coeffs.append(u / u.sum())
    coeffs = np.array(coeffs).reshape(-1, M)
    undamaged = np.tensordot(coeffs, B, axes=(1, 0))
    records = np.concatenate([ds.signals, undamaged])
    labels = np.concatenate([np.ones(N), np.zeros(len(undamaged))])
    all_coeffs = np.concatenate([np.zeros((N, M)), coeffs])
    return DetectionSet(records, labels, B, all_coeffs)


# files

def save(ds: Dataset, path):
    meta = {
        "kind": "dataset",
        "plate": to_dict(ds.plate),
        "sym": to_dict(ds.sym),
        "seed": ds.seed,
        "curation_log": ds.curation_log,
        "source": ds.source,
    }
    arrays = {
        "signals": ds.signals,
        "positions": ds.positions,
        "baselines": ds.baselines,
        "location_ids": ds.location_ids.astype(np.float64),
    }
    if ds.generated is not None:
        arrays["generated"] = ds.generated
    container.write(path, container.DATASET_MAGIC, meta, arrays)


def load(path) -> Dataset:
    meta, arrays = container.read(path, container.DATASET_MAGIC)
    for key in ("signals", "positions", "baselines", "location_ids"):
        if key not in arrays:
            raise container.FormatError(f"{path}: missing array {key!r}")
    return Dataset(arrays["signals"], arrays["positions"], arrays["baselines"],
                   plate_from_dict(meta["plate"]), sym_from_dict(meta["sym"]), int(meta["seed"]),
                   arrays["location_ids"].astype(np.int64), list(meta.get("curation_log", [])),
                   meta.get("source", "synthetic"), arrays.get("generated"))


def import_arrays(path, signals_key: str = "signals", positions_key: str = "positions",
                  baselines_key: str = "baselines", plate: PlateConfig | None = None) -> Dataset:
    """Build a ``Dataset`` from externally compressed data stored as a NumPy ``.npz``.

    Expected arrays: signals (N, 4, 4, T) indexed (receiver, sender, time),
    positions (N, 2) in mm and baselines (M, 4, 4, T).  Positions given in
    corner-origin coordinates (all non-negative) are re-centred on the grid.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no compressed-data export at {path}")
    with np.load(path) as data:
        missing = [k for k in (signals_key, positions_key, baselines_key) if k not in data]
        if missing:
            raise container.FormatError(f"{path}: missing arrays {missing}")
        signals = np.asarray(data[signals_key], dtype=np.float64)
        positions = np.asarray(data[positions_key], dtype=np.float64)
        baselines = np.asarray(data[baselines_key], dtype=np.float64)
    if np.all(positions >= 0):
        positions = positions - (positions.max(axis=0) + positions.min(axis=0)) / 2
    plate = plate or PlateConfig()
    if signals.shape[-1] != plate.output_length:
        log.warning("imported signals have length %d, expected %d", signals.shape[-1], plate.output_length)
    return Dataset(signals, positions, baselines, plate, SymmetryBreakSpec(), 0, source=str(path))
