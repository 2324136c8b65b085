"""Equivariance-error measures, heatmaps and symmetry-weight inspection.

Three error measures are provided:

* ``baseline_equivariance_error`` (R0): how far a load-free record is from its
  own images under the square group.
* ``input_equivariance_field`` (R(x)): the same comparison between a record and
  the transformed record of the mirrored or rotated load position.
* ``learned_equivariance_field`` (Q(x)): how far a model is from commuting with
  the group action.

Norms are Frobenius over receiver, sender and time.  Self-interaction
(diagonal) records are left out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dihedral as d4
from .models import Model
from .signals.config import PlateConfig
from .signals.dataset import Dataset
from .signals.synth import arrival_time_us

log = logging.getLogger(__name__)

_OFF = ~np.eye(4, dtype=bool)


def _off_diagonal(V: np.ndarray) -> np.ndarray:
    """Zero the diagonal of (..., 4, 4, T) records."""
    V = np.array(V, dtype=np.float64)
    idx = np.arange(4)
    V[..., idx, idx, :] = 0.0
    return V


def first_arrival_index(plate: PlateConfig) -> int:
    """First sample of the trimmed compressed record at or after the S0 arrival along an edge path."""
    t_ms = arrival_time_us(plate, plate.transducer_side, "S0") / 1000.0
    n = plate.compressed_length
    return max(0, int(np.floor(t_ms / plate.duration_ms * n)) - plate.trim)


def baseline_equivariance_error(baselines: np.ndarray, start: int = 0) -> tuple[float, float, np.ndarray]:
    """R0 of each baseline: mean over the group of |V - g.V| / |V|.

    Samples before ``start`` and the diagonal are ignored.  Returns the mean
    and standard deviation over baselines together with the per-baseline values.
    """
    B = np.asarray(baselines, dtype=np.float64)
    if B.ndim == 3:
        B = B[None]
    if B.ndim != 4 or B.shape[1:3] != (4, 4) or len(B) == 0:
        raise ValueError("expected one or more (4, 4, T) baselines")
    B = _off_diagonal(B[..., start:])
    values = []
    for V in B:
        norm = np.linalg.norm(V)
        if norm == 0.0:
            raise ValueError("zero-norm baseline")
        errs = [np.linalg.norm(V - d4.act_on_adjacency(g, V)) for g in d4.elements()]
        values.append(np.mean(errs) / norm)
    values = np.array(values)
    return float(values.mean()), float(values.std()), values


# heatmaps

@dataclass
class HeatmapGrid:
    """Pixel accumulator centred on the plate; pixel (i, j) has centre ((j - c) * pixel, (i - c) * pixel)."""
    n: int = 51
    pixel: float = 5.0
    sums: np.ndarray = field(default=None)
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sums is None:
            self.sums = np.zeros((self.n, self.n))
        if self.counts is None:
            self.counts = np.zeros((self.n, self.n), dtype=np.int64)

    @property
    def centres(self) -> np.ndarray:
        return (np.arange(self.n) - (self.n - 1) / 2) * self.pixel

    @property
    def missing(self) -> np.ndarray:
        return self.counts == 0

    @property
    def values(self) -> np.ndarray:
        """Per-pixel mean, NaN where nothing was contributed."""
        out = np.full((self.n, self.n), np.nan)
        hit = self.counts > 0
        out[hit] = self.sums[hit] / self.counts[hit]
        return out

    def add(self, position, value: float, footprint: float = 40.0):
        """Credit ``value`` to the pixel concentric with ``position`` and all pixels inside the footprint."""
        c = self.centres
        x, y = float(position[0]), float(position[1])
        col = int(np.argmin(np.abs(c - x)))
        row = int(np.argmin(np.abs(c - y)))
        half = footprint / 2 - self.pixel / 2
        tol = 1e-9 * max(1.0, footprint)
        cols = np.flatnonzero(np.abs(c - x) <= half + tol)
        rows = np.flatnonzero(np.abs(c - y) <= half + tol)
        mask = np.zeros((self.n, self.n), dtype=bool)
        mask[np.ix_(rows, cols)] = True
        mask[row, col] = True
        self.sums[mask] += value
        self.counts[mask] += 1

    def to_csv(self, path):
        """Rows from the top of the plate (largest y) down; missing pixels are empty cells."""
        vals = self.values[::-1]
        lines = [",".join("" if np.isnan(v) else repr(float(v)) for v in row) for row in vals]
        Path(path).write_text("\n".join(lines) + "\n")

    def to_pgm(self, path, vmax: float | None = None):
        """8-bit greyscale image, top row = largest y; missing pixels are white."""
        vals = self.values[::-1]
        finite = vals[~np.isnan(vals)]
        top = vmax if vmax is not None else (finite.max() if finite.size else 1.0)
        top = top if top > 0 else 1.0
        img = np.full(vals.shape, 255, dtype=np.uint8)
        ok = ~np.isnan(vals)
        img[ok] = np.clip(np.round(vals[ok] / top * 254), 0, 254).astype(np.uint8)
        header = f"P5\n{self.n} {self.n}\n255\n".encode()
        Path(path).write_bytes(header + img.tobytes())


def render_heatmap(positions, values, n: int = 51, pixel: float = 5.0,
                   footprint: float = 40.0) -> HeatmapGrid:
    """Accumulate (position, value) samples; off-lattice positions are snapped with a warning."""
    grid = HeatmapGrid(n, pixel)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(positions) != len(values):
        raise ValueError("positions and values disagree in length")
    for p, v in zip(positions, values):
        snapped = np.round(p / pixel) * pixel
        if np.any(np.abs(snapped - p) > 1e-6 * pixel):
            log.warning("position %s is off the %.3g mm lattice; snapped to %s", p, pixel, snapped)
        grid.add(snapped, v, footprint)
    return grid


# per-position fields

@dataclass
class FieldResult:
    positions: np.ndarray
    values: np.ndarray
    heatmap: HeatmapGrid
    skipped: int = 0


def _mean_subtracted(ds: Dataset) -> np.ndarray:
    if ds.baselines.shape[0] == 0:
        return ds.signals
    return ds.signals - ds.baselines.mean(axis=0)


def input_equivariance_field(ds: Dataset, n: int = 51, pixel: float = 5.0) -> FieldResult:
    """R(x): mean over the group of |V(x) - g.V(g^-1 x)| / mean(|V(x)|, |V(g^-1 x)|).

    Each transformed position is snapped to the nearest sampled location; a
    group element whose partner is farther than half a grid pitch is skipped.
    """
    V = _off_diagonal(_mean_subtracted(ds))
    pos = ds.positions
    norms = np.linalg.norm(V.reshape(len(V), -1), axis=1)
    pitch = ds.plate.pitch if ds.plate.pitch > 0 else pixel
    values = np.empty(len(V))
    skipped = 0
    for i, x in enumerate(pos):
        terms = []
        for g in d4.elements():
            partner = d4.act_on_points(g.inverse(), x)
            dist = np.linalg.norm(pos - partner, axis=1)
            j = int(np.argmin(dist))
            if dist[j] > pitch / 2:
                skipped += 1
                log.info("no orbit partner for location %d under %s", i, d4.NAMES[g.index])
                continue
            denom = 0.5 * (norms[i] + norms[j])
            diff = np.linalg.norm(V[i] - d4.act_on_adjacency(g, V[j]))
            terms.append(0.0 if denom == 0.0 else diff / denom)
        values[i] = np.mean(terms) if terms else np.nan
    ok = ~np.isnan(values)
    return FieldResult(pos, values, render_heatmap(pos[ok], values[ok], n, pixel), skipped)


def learned_equivariance_field(model: Model, ds: Dataset, normalized: bool = False,
                               n: int = 51, pixel: float = 5.0) -> FieldResult:
    """Q(x): mean over the group of |R_g psi(V) - psi(g.V)|, averaged over baseline variants.

    ``normalized`` divides each term by |psi(V)|.  For detectors the output is a
    scalar and R_g is the identity.
    """
    sig = ds.signals
    B = ds.baselines if ds.baselines.shape[0] else np.zeros((1,) + sig.shape[1:])
    locate = model.spec.task == "locate"
    values = np.empty(len(sig))
    for i in range(len(sig)):
        X = sig[i][None] - B                                          # (M, 4, 4, T)
        stacked = np.stack([d4.act_on_adjacency(g, X, axes=(1, 2)) for g in d4.elements()])
        out = model.predict(stacked.reshape((-1,) + X.shape[1:])).reshape(8, len(B), -1)
        base = out[0]                                                 # identity comes first
        errs = []
        for g in d4.elements():
            ref = base @ d4.VECTOR_REP[g.index].T if locate else base
            e = np.linalg.norm(ref - out[g.index], axis=-1)
            if normalized:
                e = e / np.maximum(np.linalg.norm(base, axis=-1), 1e-300)
            errs.append(e)
        values[i] = float(np.mean(errs))
    return FieldResult(ds.positions, values, render_heatmap(ds.positions, values, n, pixel))


# symmetry-breaking weights

def depth_trend(deviations) -> dict:
    """Least-squares slope of deviation against depth, and whether it is monotone decreasing."""
    d = np.asarray(deviations, dtype=np.float64)
    if d.size < 2:
        return {"slope": 0.0, "decreasing": False}
    depth = np.arange(d.size, dtype=np.float64)
    slope = float(np.polyfit(depth, d, 1)[0])
    return {"slope": slope, "decreasing": bool(np.all(np.diff(d) < 0))}


def symmetry_weight_report(model: Model) -> dict:
    """Per-layer symmetry weights, their largest deviation from one, and the depth trend."""
    if model.spec.variant != "approximate":
        raise ValueError(f"symmetry weights exist only on approximate models, not {model.spec.variant!r}")
    rows = []
    for depth, name in enumerate(model.symmetry_layers):
        w = model.omega(name).data
        rows.append({"layer": name, "depth": depth, "omega": w.tolist(),
                     "max_deviation": float(np.abs(w - 1.0).max())})
    devs = [r["max_deviation"] for r in rows]
    return {"layers": rows, "first": devs[0], "last": devs[-1], **depth_trend(devs)}
