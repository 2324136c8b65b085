"""Plate, excitation and symmetry-breaking configuration for the synthetic generator."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PlateConfig:
    # geometry (mm); the origin is the plate centre
    side: float = 610.0
    thickness: float = 1.2
    transducer_side: float = 350.0
    load_side: float = 40.0
    grid: int = 51
    grid_span: float = 250.0
    # excitation and recording
    frequency_khz: float = 300.0
    cycles: int = 5
    n_samples: int = 10_000
    duration_ms: float = 0.4
    # propagation (mm/us); A0 is calibrated so the diagonal arrival sits mid 0.20-0.24 ms
    v_a0: float = 2.25
    v_s0: float = 5.4
    a0_amplitude: float = 1.0
    s0_amplitude: float = 0.3
    # group-delay slope per unit distance (us per mm per MHz of detuning)
    dispersion_a0: float = -0.08
    dispersion_s0: float = 0.01
    damping_per_mm: float = 5e-4
    reflection: float = 0.6
    # contact load; rays passing within about shadow_width (mm) of the centre are attenuated
    shadow_width: float = 75.0
    absorb_a0: float = 0.6
    absorb_s0: float = 0.2
    scatter_a0: float = 0.02
    scatter_s0: float = 0.01
    # noise and baselines
    noise: float = 0.002
    n_baselines: int = 6
    # compression
    band_khz: tuple[float, float] = (180.0, 420.0)
    compressed_length: int = 192
    trim: int = 34

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be positive")
        if self.grid_span / 2 + self.load_side / 2 > self.side / 2:
            raise ValueError("sampled square does not fit on the plate")
        if not 0 <= self.trim < self.compressed_length:
            raise ValueError("trim must be smaller than the compressed length")

    @property
    def sample_rate_mhz(self) -> float:
        return self.n_samples / (self.duration_ms * 1000.0)

    @property
    def dt_us(self) -> float:
        return self.duration_ms * 1000.0 / self.n_samples

    @property
    def pitch(self) -> float:
        return self.grid_span / (self.grid - 1) if self.grid > 1 else 0.0

    @property
    def half_side(self) -> float:
        return self.side / 2

    @property
    def transducers(self) -> np.ndarray:
        """(4, 2) positions in mm, numbered counterclockwise from lower-left."""
        a = self.transducer_side / 2
        return np.array([[-a, -a], [a, -a], [a, a], [-a, a]])

    @property
    def output_length(self) -> int:
        return self.compressed_length - self.trim

    def grid_positions(self) -> np.ndarray:
        """(grid**2, 2) load centres on the sampling lattice, row-major from lower-left."""
        if self.grid == 1:
            return np.zeros((1, 2))
        # (i - centre) * pitch keeps the lattice symmetric bit for bit
        axis = (np.arange(self.grid) - (self.grid - 1) / 2) * self.pitch
        yy, xx = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    @property
    def pickup_samples(self) -> int:
        """Leading untrimmed compressed samples that hold only a sender's own pickup."""
        gap = self.half_side - self.transducer_side / 2
        # half the echo delay leaves room for the band-limited ringing of the first echo
        echo_us = gap / max(self.v_a0, self.v_s0)
        step_us = self.duration_ms * 1000.0 / self.compressed_length
        return max(1, min(self.compressed_length, int(echo_us // step_us)))

    def time_ms(self) -> np.ndarray:
        """Times (ms) of the samples of a compressed, trimmed signal."""
        step = self.duration_ms / self.compressed_length
        return (np.arange(self.output_length) + self.trim) * step

    def window_to_samples(self, t0_ms: float, t1_ms: float) -> tuple[int, int]:
        """Map a time window to a [start, stop) slice of the trimmed compressed signal."""
        if t0_ms < 0 or t1_ms > self.duration_ms + 1e-12 or t1_ms <= t0_ms:
            raise ValueError(f"window {t0_ms}-{t1_ms} ms lies outside the 0-{self.duration_ms} ms record")
        n = self.compressed_length
        start = int(np.floor(round(t0_ms / self.duration_ms * n, 9))) - self.trim
        stop = int(np.floor(round(t1_ms / self.duration_ms * n, 9))) - self.trim
        start = max(start, 0)
        stop = min(stop, self.output_length)
        if stop <= start:
            raise ValueError(f"window {t0_ms}-{t1_ms} ms contains no retained samples")
        return start, stop


@dataclass(frozen=True)
class SymmetryBreakSpec:
    """Controls for deviations from square symmetry; all zeros gives an exactly symmetric plate."""
    # fractional speed change along x relative to y (rolling direction)
    anisotropy: float = 0.0
    # standard deviations of per-transducer gain (fractional) and timing (us)
    gain_jitter: float = 0.0
    phase_jitter: float = 0.0
    # standard deviation of per-edge reflection coefficient (fractional)
    boundary_irregularity: float = 0.0

    @property
    def is_zero(self) -> bool:
        return not any(getattr(self, f.name) for f in fields(self))


def _coerce(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kw = dict(d)
    if "band_khz" in kw:
        kw["band_khz"] = tuple(kw["band_khz"])
    return cls(**kw)


def plate_from_dict(d: dict) -> PlateConfig:
    return _coerce(PlateConfig, d)


def sym_from_dict(d: dict) -> SymmetryBreakSpec:
    return _coerce(SymmetryBreakSpec, d)


def to_dict(cfg) -> dict:
    d = asdict(cfg)
    if "band_khz" in d:
        d["band_khz"] = list(d["band_khz"])
    return d


def load_config(path) -> dict:
    """Read a TOML or JSON config file into a dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)
