"""Audio containers, manifests, mixture simulation and enrollment sampling.

Everything inside the pipeline runs at 16 kHz mono. Files are resampled on
ingestion by :func:`read_wav`.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if self.samples.size < 1:
            raise ValueError("audio signal must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio signal contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    path: str
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"{self.utterance_id}: duration must be positive")


@dataclass(frozen=True)
class MixtureRecord:
    """One line of a mixture manifest: a pre-mixed example with its sources on disk."""

    mixture_id: str
    mixture_path: str
    target_path: str
    interference_path: str
    noise_path: Optional[str]
    target_speaker_id: str
    target_utterance_id: str
    duration: float


@dataclass
class MixtureExample:
    mixture: AudioSignal
    target: AudioSignal
    interference: AudioSignal
    target_speaker_id: str
    enrollment: AudioSignal
    noise: Optional[AudioSignal] = None
    mixture_id: str = ""
    enrollment_id: str = ""
    target_utterance_id: str = ""

    def __post_init__(self):
        signals = [self.mixture, self.target, self.interference]
        if self.noise is not None:
            signals.append(self.noise)
        if len({len(s) for s in signals}) != 1:
            raise ValueError("mixture, target, interference and noise must share length")
        if len({s.sample_rate for s in signals + [self.enrollment]}) != 1:
            raise ValueError("all signals of an example must share a sample rate")
        if self.enrollment_id and self.enrollment_id == self.target_utterance_id:
            raise ValueError(f"{self.mixture_id}: enrollment aliases the target utterance")


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def read_wav(path, sample_rate: int = SAMPLE_RATE) -> AudioSignal:
    """Read a WAV file as float mono at ``sample_rate``.

    Integer PCM is scaled to [-1, 1); multi-channel files are averaged;
    other rates go through polyphase resampling.
    """
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    else:
        data = data.astype(np.float32)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if sr != sample_rate:
        g = math.gcd(sr, sample_rate)
        data = resample_poly(data, sample_rate // g, sr // g).astype(np.float32)
    return AudioSignal(data, sample_rate)


def write_wav(path, signal: AudioSignal, subtype: str = "float"):
    """Write ``signal`` as float32 (default) or 16-bit PCM."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if subtype == "float":
        data = signal.samples.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    wavfile.write(str(path), signal.sample_rate, data)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def _resolve(path: str, root: Path) -> str:
    p = Path(path)
    return str(p if p.is_absolute() else root / p)


def _rows(path) -> Iterable[List[str]]:
    with open(path, newline="") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield line.split("\t")


def read_manifest(path) -> List[UtteranceRecord]:
    """Read a tab-separated utterance manifest.

    Each line holds ``utterance_id, speaker_id, path, duration``. Relative
    paths are resolved against the manifest's directory.
    """
    root = Path(path).parent
    records = []
    seen = set()
    for i, row in enumerate(_rows(path), 1):
        if len(row) != 4:
            raise ValueError(f"{path}:{i}: expected 4 fields, got {len(row)}")
        utt, spk, wav, dur = row
        if utt in seen:
            raise ValueError(f"{path}:{i}: duplicate utterance_id {utt!r}")
        seen.add(utt)
        records.append(UtteranceRecord(utt, spk, _resolve(wav, root), float(dur)))
    return records


def write_manifest(path, records: Sequence[UtteranceRecord], relative_to=None):
    root = Path(relative_to) if relative_to is not None else None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            p = r.path
            if root is not None:
                try:
                    p = str(Path(p).relative_to(root))
                except ValueError:
                    pass
            f.write(f"{r.utterance_id}\t{r.speaker_id}\t{p}\t{r.duration:.4f}\n")


MIXTURE_FIELDS = (
    "mixture_id", "mixture_path", "target_path", "interference_path",
    "noise_path", "target_speaker_id", "target_utterance_id", "duration",
)


def read_mixture_manifest(path) -> List[MixtureRecord]:
    """Read a tab-separated mixture manifest (fields in ``MIXTURE_FIELDS`` order, ``-`` for no noise)."""
    root = Path(path).parent
    out = []
    for i, row in enumerate(_rows(path), 1):
        if len(row) != len(MIXTURE_FIELDS):
            raise ValueError(f"{path}:{i}: expected {len(MIXTURE_FIELDS)} fields, got {len(row)}")
        mid, mix, tgt, itf, noise, spk, utt, dur = row
        out.append(MixtureRecord(
            mid, _resolve(mix, root), _resolve(tgt, root), _resolve(itf, root),
            None if noise == "-" else _resolve(noise, root), spk, utt, float(dur),
        ))
    return out


def write_mixture_manifest(path, records: Sequence[MixtureRecord], relative_to=None):
    root = Path(relative_to) if relative_to is not None else None

    def rel(p):
        if p is None:
            return "-"
        if root is not None:
            try:
                return str(Path(p).relative_to(root))
            except ValueError:
                pass
        return p

    with open(path, "w") as f:
        for r in records:
            f.write("\t".join([
                r.mixture_id, rel(r.mixture_path), rel(r.target_path), rel(r.interference_path),
                rel(r.noise_path), r.target_speaker_id, r.target_utterance_id, f"{r.duration:.4f}",
            ]) + "\n")


def read_enrollment_map(path) -> Dict[str, str]:
    """Map mixture id to enrollment utterance id.

    Whitespace-separated lines; the first column is the mixture id and the
    last column the enrollment utterance id.
    """
    mapping = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if len(parts) < 2 or parts[0].startswith("#"):
                continue
            mapping[parts[0]] = parts[-1]
    return mapping


def librispeech_speaker(utterance_id: str) -> str:
    return utterance_id.split("-")[0]


def read_librimix_metadata(csv_path, root=None) -> List[MixtureRecord]:
    """Turn a LibriMix metadata CSV into two target-speaker records per mixture.

    Source paths that do not exist as written are re-rooted under ``root``
    (the directory containing ``wav16k/``) using the part after ``Libri2Mix/``.
    """
    def fix(p):
        if not p:
            return None
        if root is None or Path(p).exists():
            return p
        tail = p.split("Libri2Mix/", 1)[-1]
        return str(Path(root) / tail)

    out = []
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            mid = row["mixture_ID"]
            length = float(row["length"]) / SAMPLE_RATE
            srcs = [fix(row["source_1_path"]), fix(row["source_2_path"])]
            utts = mid.split("_")
            noise = fix(row.get("noise_path", ""))
            for k in range(2):
                utt = utts[k] if k < len(utts) else f"{mid}_s{k + 1}"
                out.append(MixtureRecord(
                    f"{mid}_s{k + 1}", fix(row["mixture_path"]), srcs[k], srcs[1 - k], noise,
                    librispeech_speaker(utt), utt, length,
                ))
    return out


# ---------------------------------------------------------------------------
# Mixture simulation, chunking, enrollment
# ---------------------------------------------------------------------------

def simulate_mixture(
    target: AudioSignal,
    interference: AudioSignal,
    noise: Optional[AudioSignal] = None,
    mode: str = "min",
) -> AudioSignal:
    """Sum target, interference and optional noise, truncated to the shortest input."""
    if mode != "min":
        raise ValueError(f"only min-mode mixing is supported, got {mode!r}")
    parts = [target, interference] + ([noise] if noise is not None else [])
    rates = {p.sample_rate for p in parts}
    if len(rates) != 1:
        raise ValueError(f"sample-rate mismatch: {sorted(rates)}")
    n = min(len(p) for p in parts)
    x = np.zeros(n, dtype=np.result_type(*[p.samples.dtype for p in parts]))
    for p in parts:
        x = x + p.samples[:n]
    return AudioSignal(x, target.sample_rate)


def scale_to_tir(target: AudioSignal, interference: AudioSignal, tir_db: float) -> AudioSignal:
    """Rescale ``interference`` so the target-to-interference ratio is ``tir_db``.

    Used only by the synthetic mixing mode; pre-mixed corpora keep their gains.
    """
    n = min(len(target), len(interference))
    pt = np.mean(target.samples[:n] ** 2)
    pi = np.mean(interference.samples[:n] ** 2)
    if pi == 0 or pt == 0:
        return interference
    gain = math.sqrt(pt / pi) * 10 ** (-tir_db / 20)
    return AudioSignal(interference.samples * gain, interference.sample_rate)


def _chunk_offset(length: int, target: int, rng: np.random.Generator) -> int:
    if length <= target:
        return 0
    return int(rng.integers(0, length - target + 1))


def _take(samples: np.ndarray, offset: int, target: int) -> np.ndarray:
    out = samples[offset:offset + target]
    if out.shape[0] < target:
        out = np.concatenate([out, np.zeros(target - out.shape[0], dtype=samples.dtype)])
    return out


def chunk_segment(signal: AudioSignal, seconds: float, rng: np.random.Generator) -> AudioSignal:
    """Random fixed-length crop; shorter inputs are zero-padded at the end."""
    if not seconds > 0:
        raise ValueError("seconds must be positive")
    target = int(round(seconds * signal.sample_rate))
    offset = _chunk_offset(len(signal), target, rng)
    return AudioSignal(_take(signal.samples, offset, target), signal.sample_rate)


def chunk_example(example: MixtureExample, seconds: float, rng: np.random.Generator) -> MixtureExample:
    """Crop mixture and sources with one shared offset. The enrollment stays whole."""
    sr = example.mixture.sample_rate
    target = int(round(seconds * sr))
    offset = _chunk_offset(len(example.mixture), target, rng)

    def crop(sig):
        return None if sig is None else AudioSignal(_take(sig.samples, offset, target), sr)

    return MixtureExample(
        mixture=crop(example.mixture),
        target=crop(example.target),
        interference=crop(example.interference),
        noise=crop(example.noise),
        target_speaker_id=example.target_speaker_id,
        enrollment=example.enrollment,
        mixture_id=example.mixture_id,
        enrollment_id=example.enrollment_id,
        target_utterance_id=example.target_utterance_id,
    )


def sample_enrollment(
    manifest: Sequence[UtteranceRecord],
    speaker_id: str,
    exclude_utterance: str,
    rng: np.random.Generator,
) -> UtteranceRecord:
    """Draw an enrollment utterance of ``speaker_id`` other than ``exclude_utterance``."""
    candidates = [r for r in manifest if r.speaker_id == speaker_id and r.utterance_id != exclude_utterance]
    if not candidates:
        n = sum(r.speaker_id == speaker_id for r in manifest)
        raise ValueError(
            f"speaker {speaker_id!r} has {n} utterance(s); need at least one besides "
            f"{exclude_utterance!r} for enrollment"
        )
    return candidates[int(rng.integers(len(candidates)))]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@lru_cache(maxsize=512)
def _cached_read(path: str) -> AudioSignal:
    return read_wav(path)


@dataclass
class TseDataset:
    """Pre-mixed target-speaker examples with on-the-fly chunking and enrollment draws.

    ``load`` maps a path (or any key) to an :class:`AudioSignal`; the default
    reads WAV files with a small cache. In-memory corpora pass ``dict.__getitem__``.
    """

    mixtures: List[MixtureRecord]
    utterances: List[UtteranceRecord]
    segment_seconds: Optional[float] = 3.0
    load: Callable[[str], AudioSignal] = _cached_read
    _by_speaker: Dict[str, List[UtteranceRecord]] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_speaker = {}
        for r in self.utterances:
            self._by_speaker.setdefault(r.speaker_id, []).append(r)

    def __len__(self):
        return len(self.mixtures)

    @property
    def speakers(self) -> List[str]:
        return sorted({m.target_speaker_id for m in self.mixtures})

    def example(self, index: int, rng: np.random.Generator, enrollment_id: Optional[str] = None) -> MixtureExample:
        rec = self.mixtures[index]
        if enrollment_id is None:
            enr = sample_enrollment(
                self._by_speaker.get(rec.target_speaker_id, []),
                rec.target_speaker_id, rec.target_utterance_id, rng,
            )
        else:
            enr = next((r for r in self.utterances if r.utterance_id == enrollment_id), None)
            if enr is None:
                raise KeyError(f"enrollment utterance {enrollment_id!r} not in the utterance manifest")
        target = self.load(rec.target_path)
        interference = self.load(rec.interference_path)
        noise = self.load(rec.noise_path) if rec.noise_path else None
        mixture = self.load(rec.mixture_path)
        n = min(len(s) for s in (target, interference, mixture) + ((noise,) if noise else ()))

        def cut(s):
            return None if s is None else AudioSignal(s.samples[:n], s.sample_rate)

        ex = MixtureExample(
            mixture=cut(mixture), target=cut(target), interference=cut(interference),
            noise=cut(noise), target_speaker_id=rec.target_speaker_id,
            enrollment=self.load(enr.path), mixture_id=rec.mixture_id,
            enrollment_id=enr.utterance_id, target_utterance_id=rec.target_utterance_id,
        )
        if self.segment_seconds:
            ex = chunk_example(ex, self.segment_seconds, rng)
        return ex
