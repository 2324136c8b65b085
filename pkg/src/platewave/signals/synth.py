"""Phenomenological guided-wave generator for a square plate with four corner transducers.

Each sender/receiver record is a sum of tone-burst wavepackets built in the
frequency domain:

* direct A0 and S0 packets delayed by path length over group velocity, with a
  quadratic phase that spreads the packet in proportion to distance;
* first-order edge reflections from image sources;
* when a load is present, attenuation of every packet whose path passes near
  the load, and a weak packet scattered from the load centre.

Gaussian noise is added in the time domain.  With a zero ``SymmetryBreakSpec``
and zero noise every quantity depends only on D4-invariant geometry, so the
records are exactly covariant under the square group.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PlateConfig, SymmetryBreakSpec

MODES = ("A0", "S0")
_REF_DISTANCE = 100.0  # mm; geometric spreading is 1/sqrt(d / d_ref) beyond this
_SUPPORT_TOL = 1e-10


def tone_burst(plate: PlateConfig) -> np.ndarray:
    """Hanning-windowed tone burst starting at t = 0, sampled on the raw record grid."""
    t = np.arange(plate.n_samples) * plate.dt_us
    f0 = plate.frequency_khz / 1000.0
    width = plate.cycles / f0
    on = t < width
    out = np.zeros_like(t)
    out[on] = 0.5 * (1 - np.cos(2 * np.pi * t[on] / width)) * np.sin(2 * np.pi * f0 * t[on])
    return out


def chirp(plate: PlateConfig, f_lo_khz: float = 40.0, f_hi_khz: float = 700.0) -> np.ndarray:
    """Windowed linear sweep of the same duration as the burst; an off-spectrum excitation."""
    t = np.arange(plate.n_samples) * plate.dt_us
    width = plate.cycles / (plate.frequency_khz / 1000.0)
    on = t < width
    f_lo, f_hi = f_lo_khz / 1000.0, f_hi_khz / 1000.0
    phase = 2 * np.pi * (f_lo * t + 0.5 * (f_hi - f_lo) / width * t ** 2)
    out = np.zeros_like(t)
    out[on] = 0.5 * (1 - np.cos(2 * np.pi * t[on] / width)) * np.sin(phase[on])
    return out


EXCITATIONS = {"burst": tone_burst, "sweep": chirp}


def arrival_time_us(plate: PlateConfig, distance_mm: float, mode: str = "A0") -> float:
    """Time of the envelope peak of a packet travelling ``distance_mm``."""
    v = plate.v_a0 if mode == "A0" else plate.v_s0
    half_burst = 0.5 * plate.cycles / (plate.frequency_khz / 1000.0)
    return distance_mm / v + half_burst


@dataclass(frozen=True)
class Perturbation:
    """One realisation of the symmetry-breaking controls for a plate."""
    gains: np.ndarray      # (4,) per transducer
    delays: np.ndarray     # (4,) us per transducer
    reflection: np.ndarray  # (4,) per edge: x-, x+, y-, y+
    anisotropy: float

    @classmethod
    def draw(cls, plate: PlateConfig, sym: SymmetryBreakSpec, seed: int) -> "Perturbation":
        z = np.random.default_rng([seed, 2]).standard_normal(12)
        return cls(gains=1.0 + sym.gain_jitter * z[0:4],
                   delays=sym.phase_jitter * z[4:8],
                   reflection=plate.reflection * (1.0 + sym.boundary_irregularity * z[8:12]),
                   anisotropy=sym.anisotropy)


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from point ``p`` (2,) to segments a->b, both (..., 2)."""
    ab = b - a
    ap = p - a
    den = (ab * ab).sum(-1)
    t = np.where(den > 0, (ap * ab).sum(-1) / np.where(den > 0, den, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.sqrt((d * d).sum(-1))


def _direction_factor(delta: np.ndarray, anisotropy: float) -> np.ndarray:
    """Speed multiplier 1 + a cos(2 theta) for propagation along ``delta``."""
    if anisotropy == 0.0:
        return np.ones(delta.shape[:-1])
    dx2 = delta[..., 0] ** 2
    dy2 = delta[..., 1] ** 2
    d2 = dx2 + dy2
    cos2 = np.where(d2 > 0, (dx2 - dy2) / np.where(d2 > 0, d2, 1.0), 0.0)
    return 1.0 + anisotropy * cos2


def _spreading(d: np.ndarray) -> np.ndarray:
    return np.sqrt(_REF_DISTANCE / np.maximum(d, _REF_DISTANCE))


def _packets(plate: PlateConfig, pert: Perturbation, load: np.ndarray | None):
    """Delay (us), amplitude and dispersion distance of every packet, shaped (4, 4, P)."""
    T = plate.transducers
    H = plate.half_side
    w = plate.shadow_width
    speeds = np.array([plate.v_a0, plate.v_s0])
    amps = np.array([plate.a0_amplitude, plate.s0_amplitude])
    absorb = np.array([plate.absorb_a0, plate.absorb_s0])
    scatter = np.array([plate.scatter_a0, plate.scatter_s0])

    S = np.broadcast_to(T[None, :, :], (4, 4, 2))   # [r, s] -> sender position
    R = np.broadcast_to(T[:, None, :], (4, 4, 2))   # [r, s] -> receiver position

    delays, ampl, dists = [], [], []

    def absorption(dist_to_path):
        if load is None:
            return np.ones(dist_to_path.shape + (2,))
        prox = np.exp(-(dist_to_path / w) ** 2)
        return 1.0 - absorb * prox[..., None]

    # direct paths
    delta = R - S
    d = np.sqrt((delta * delta).sum(-1))
    fac = _direction_factor(delta, pert.anisotropy)
    near = _segment_distance(load, S, R) if load is not None else np.zeros((4, 4))
    att = absorption(near)
    att[np.arange(4), np.arange(4)] = 1.0   # a sender's own pickup has no ray to shadow
    for m in range(2):
        delays.append(d / (speeds[m] * fac))
        ampl.append(amps[m] * _spreading(d) * np.exp(-plate.damping_per_mm * d) * att[..., m])
        dists.append(d)

    # first-order reflections: images of the sender across each edge
    for e, (axis, sign) in enumerate(((0, -1), (0, 1), (1, -1), (1, 1))):
        edge = sign * H
        img = S.copy()
        img[..., axis] = 2 * edge - S[..., axis]
        delta = R - img
        d = np.sqrt((delta * delta).sum(-1))
        t_hit = (edge - img[..., axis]) / delta[..., axis]
        hit = img + t_hit[..., None] * delta
        fac = _direction_factor(delta, pert.anisotropy)
        if load is not None:
            near = np.minimum(_segment_distance(load, S, hit), _segment_distance(load, hit, R))
        att = absorption(near if load is not None else np.zeros((4, 4)))
        for m in range(2):
            delays.append(d / (speeds[m] * fac))
            ampl.append(amps[m] * pert.reflection[e] * _spreading(d)
                        * np.exp(-plate.damping_per_mm * d) * att[..., m])
            dists.append(d)

    # scattering from the load centre
    if load is not None:
        leg1 = load - S
        leg2 = R - load
        d1 = np.sqrt((leg1 * leg1).sum(-1))
        d2 = np.sqrt((leg2 * leg2).sum(-1))
        f1 = _direction_factor(leg1, pert.anisotropy)
        f2 = _direction_factor(leg2, pert.anisotropy)
        for m in range(2):
            delays.append(d1 / (speeds[m] * f1) + d2 / (speeds[m] * f2))
            ampl.append(amps[m] * scatter[m] * _spreading(d1) * _spreading(d2)
                        * np.exp(-plate.damping_per_mm * (d1 + d2)))
            dists.append(d1 + d2)

    delays = np.stack(delays, -1)
    ampl = np.stack(ampl, -1)
    dists = np.stack(dists, -1)
    kappa = np.array([plate.dispersion_a0, plate.dispersion_s0])
    kap = np.broadcast_to(kappa, (delays.shape[-1] // 2, 2)).reshape(-1)
    # transducer gain and timing
    ampl = ampl * pert.gains[:, None, None] * pert.gains[None, :, None]
    delays = delays + pert.delays[:, None, None] + pert.delays[None, :, None]
    return delays, ampl, dists * kap


def synthesize(plate: PlateConfig, load, sym: SymmetryBreakSpec | None = None, seed: int = 0,
               noise_key: tuple[int, ...] = (1, 0), noise: float | None = None,
               excitation: str | dict[int, str] = "burst") -> np.ndarray:
    """Raw records for every (receiver, sender) pair: array (4, 4, n_samples).

    ``load`` is a load-centre (x, y) in mm, or None for a baseline.  Noise is
    drawn from an RNG keyed by ``(seed, *noise_key)`` so records can be generated
    in any order.  ``excitation`` names the source waveform, globally or per
    sender index.
    """
    sym = sym or SymmetryBreakSpec()
    if load is not None:
        load = np.asarray(load, dtype=np.float64)
        lim = plate.half_side - plate.load_side / 2
        if load.shape != (2,) or np.any(np.abs(load) > lim):
            raise ValueError(f"load centre {load} is outside the plate")
    pert = Perturbation.draw(plate, sym, seed)
    delays, ampl, kd = _packets(plate, pert, load)

    per_sender = excitation if isinstance(excitation, dict) else {}
    default = excitation if isinstance(excitation, str) else "burst"
    f = np.fft.rfftfreq(plate.n_samples, plate.dt_us)           # MHz
    f0 = plate.frequency_khz / 1000.0
    spectra = np.zeros((4, 4, f.size), dtype=np.complex128)
    cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for s in range(4):
        kind = per_sender.get(s, default)
        if kind not in cache:
            W = np.fft.rfft(EXCITATIONS[kind](plate))
            cache[kind] = (W, np.flatnonzero(np.abs(W) > _SUPPORT_TOL * np.abs(W).max()))
        W, idx = cache[kind]
        fs = f[idx]
        phase = (delays[:, s, :, None] * fs
                 + 0.5 * kd[:, s, :, None] * (fs - f0) ** 2)       # (4, P, F)
        spectra[:, s, idx] = W[idx] * (ampl[:, s, :, None] * np.exp(-2j * np.pi * phase)).sum(1)
    raw = np.fft.irfft(spectra, plate.n_samples, axis=-1)
    level = plate.noise if noise is None else noise
    if level:
        rng = np.random.default_rng([seed, *noise_key])
        raw = raw + level * rng.standard_normal(raw.shape)
    return raw
