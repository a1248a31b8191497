"""Room impulse responses for reverberation augmentation.

:class:`ImageSourceRirGenerator` places image sources of a shoebox room up to
an image budget, then continues with an exponentially decaying diffuse tail
whose decay rate is set by the target T60. Any callable with the
:class:`RirGenerator` signature can replace it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class RirFilter:
    taps: np.ndarray
    sample_rate: int
    t60: float
    room: Tuple[float, float, float]
    source: Tuple[float, float, float]
    mic: Tuple[float, float, float]

    @property
    def direct_delay(self) -> int:
        d = math.dist(self.source, self.mic)
        return int(round(d / SPEED_OF_SOUND * self.sample_rate))


class RirGenerator(Protocol):
    def __call__(self, config, rng: np.random.Generator) -> RirFilter: ...


def eyring_reflection(room: Sequence[float], t60: float) -> float:
    """Uniform wall reflection coefficient giving ``t60`` by Eyring's formula."""
    lx, ly, lz = room
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 1.0 - math.exp(-0.161 * volume / (surface * t60))
    return math.sqrt(1.0 - alpha)


def image_source_rir(
    room: Sequence[float],
    source: Sequence[float],
    mic: Sequence[float],
    t60: float,
    rng: np.random.Generator,
    sample_rate: int = 16000,
    length: Optional[int] = None,
    max_images: int = 20000,
    mixing_time: Optional[float] = None,
) -> np.ndarray:
    """Shoebox RIR, peak-normalised to 1.

    Image sources arriving before the mixing time (``mixing_time`` seconds
    after the direct sound, default ``min(sqrt(V) ms, 0.02 t60)``, capped by
    ``max_images``) are accumulated at integer-sample
    delays with amplitude ``+-beta ** k / (4 pi d)``. After the mixing time a
    Gaussian tail with the image field's expected per-tap energy
    ``c beta ** (2 c t / mfp) / (4 pi fs V)`` takes over.

    The reflection count ``k`` of a reflected image is its path length over
    the mean free path ``mfp = 4V/S``, not its exact per-wall count: exact
    counts let grazing paths dominate the late field and stretch the decay
    past the Eyring T60. Reflected images get a random polarity; with
    all-positive amplitudes, images sharing a tap add coherently and the late
    energy grows with image density.
    """
    room = np.asarray(room, dtype=float)
    src = np.asarray(source, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if np.any(room <= 0):
        raise ValueError(f"degenerate room {room.tolist()}")
    if np.any(src <= 0) or np.any(src >= room) or np.any(mic <= 0) or np.any(mic >= room):
        raise ValueError("source and microphone must lie strictly inside the room")
    if t60 <= 0:
        raise ValueError("t60 must be positive")

    direct = np.linalg.norm(src - mic) / SPEED_OF_SOUND
    if length is None:
        length = int(math.ceil((direct + 1.2 * t60) * sample_rate))
    beta = eyring_reflection(room, t60)
    volume = float(np.prod(room))
    free_path = 4 * volume / (2 * (room[0] * room[1] + room[0] * room[2] + room[1] * room[2]))

    if mixing_time is None:
        # short decays are dominated by a few sparse early spikes otherwise
        mixing_time = min(math.sqrt(volume) * 1e-3, 0.02 * t60)
    r_mix = (direct + mixing_time) * SPEED_OF_SOUND
    r_budget = (max_images * volume * 3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    r_max = min(r_mix, r_budget, length / sample_rate * SPEED_OF_SOUND)
    n_max = np.ceil(r_max / (2 * room)).astype(int) + 1

    grids = np.meshgrid(*[np.arange(-k, k + 1) for k in n_max], indexing="ij")
    n = np.stack([g.ravel() for g in grids], axis=1)  # (M, 3)
    h = np.zeros(length)
    for p in np.ndindex(2, 2, 2):
        p = np.array(p)
        pos = (1 - 2 * p) * src + 2 * n * room
        d = np.linalg.norm(pos - mic, axis=1)
        keep = d <= r_max
        d = d[keep]
        order = d / free_path
        if not p.any():
            order[np.all(n[keep] == 0, axis=1)] = 0.0  # direct path
        sign = np.where(order > 0, rng.choice([-1.0, 1.0], size=d.shape), 1.0)
        delay = np.round(d / SPEED_OF_SOUND * sample_rate).astype(int)
        ok = delay < length
        amp = sign * beta ** order / (4 * math.pi * d)
        h += np.bincount(delay[ok], weights=amp[ok], minlength=length)

    start = int(math.floor(r_max / SPEED_OF_SOUND * sample_rate)) + 1
    if start < length:
        t = np.arange(start, length) / sample_rate
        std = np.sqrt(SPEED_OF_SOUND / (4 * math.pi * sample_rate * volume)) * beta ** (SPEED_OF_SOUND * t / free_path)
        h[start:] += std * rng.standard_normal(length - start)
    return h / np.max(np.abs(h))


def schroeder_t60(taps: np.ndarray, sample_rate: int, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T60 from the backward-integrated energy decay curve (T20 fit, extrapolated to 60 dB)."""
    energy = np.cumsum(np.asarray(taps, dtype=float)[::-1] ** 2)[::-1]
    edc = 10 * np.log10(energy / energy[0] + 1e-300)
    i0 = int(np.argmax(edc <= start_db))
    i1 = int(np.argmax(edc <= stop_db))
    if i1 <= i0 + 1:
        raise ValueError("decay curve does not span the fitting range")
    t = np.arange(i0, i1) / sample_rate
    slope, _ = np.polyfit(t, edc[i0:i1], 1)
    return -60.0 / slope


def sample_room(config, rng: np.random.Generator):
    """Uniform room dimensions, then source and mic uniformly inside, ``min_distance`` apart."""
    lo = np.asarray(config.room_min, dtype=float)
    hi = np.asarray(config.room_max, dtype=float)
    if np.any(lo <= 0) or np.any(hi <= 0):
        raise ValueError(f"degenerate room bounds {lo.tolist()} .. {hi.tolist()}")
    if np.any(lo > hi):
        raise ValueError("room_min must not exceed room_max")
    room = rng.uniform(lo, hi)
    margin = np.minimum(config.wall_margin, room / 4)
    for _ in range(1000):
        src = rng.uniform(margin, room - margin)
        mic = rng.uniform(margin, room - margin)
        if np.linalg.norm(src - mic) >= config.min_distance:
            break
    else:
        raise ValueError(f"cannot place source and mic {config.min_distance} m apart in {room.round(2).tolist()}")
    return room, src, mic


class ImageSourceRirGenerator:
    """Samples room, positions and T60 from an :class:`~tseaug.augment.AugmentConfig`."""

    def __init__(self, sample_rate: int = 16000, max_images: int = 20000):
        self.sample_rate = sample_rate
        self.max_images = max_images

    def __call__(self, config, rng: np.random.Generator, t60: Optional[float] = None) -> RirFilter:
        room, src, mic = sample_room(config, rng)
        if t60 is None:
            t60 = float(rng.uniform(*config.t60_range_s))
        taps = image_source_rir(room, src, mic, t60, rng, self.sample_rate, max_images=self.max_images)
        return RirFilter(taps, self.sample_rate, t60, tuple(room), tuple(src), tuple(mic))


def apply_reverb(c, h: RirFilter):
    """Convolve ``c`` with ``h``, keep the first ``len(c)`` samples, peak-normalise if clipping."""
    from scipy.signal import fftconvolve

    from ..data import AudioSignal

    if c.sample_rate != h.sample_rate:
        raise ValueError(f"sample-rate mismatch: signal {c.sample_rate} Hz, filter {h.sample_rate} Hz")
    y = fftconvolve(c.samples.astype(float), h.taps)[: len(c)]
    peak = np.max(np.abs(y))
    if peak > 1.0:
        y = y / peak
    return AudioSignal(y.astype(c.samples.dtype), c.sample_rate)
