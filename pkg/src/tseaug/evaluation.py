"""Test-set scoring: SI-SDR, SDR, SI-SDRi and the fraction of utterances improved by more than 1 dB."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .objectives import sdr_metric, si_sdr_db

log = logging.getLogger(__name__)

ACCURACY_THRESHOLD_DB = 1.0

Extractor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EvalRecord:
    utterance_id: str
    si_sdr: float
    si_sdr_mixture: float
    sdr: float
    sdr_mixture: float = float("nan")

    @property
    def si_sdri(self) -> float:
        return self.si_sdr - self.si_sdr_mixture

    @property
    def correct(self) -> bool:
        return self.si_sdri > ACCURACY_THRESHOLD_DB


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else float("nan")


@dataclass
class EvalResult:
    records: List[EvalRecord] = field(default_factory=list)
    label: str = ""
    skipped: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.utterance_id)

    def __len__(self):
        return len(self.records)

    @property
    def mean_si_sdr(self) -> float:
        return _mean(r.si_sdr for r in self.records)

    @property
    def mean_si_sdri(self) -> float:
        return _mean(r.si_sdri for r in self.records)

    @property
    def mean_sdr(self) -> float:
        return _mean(r.sdr for r in self.records)

    @property
    def mean_si_sdr_mixture(self) -> float:
        return _mean(r.si_sdr_mixture for r in self.records)

    @property
    def mean_sdr_mixture(self) -> float:
        return _mean(r.sdr_mixture for r in self.records)

    @property
    def accuracy(self) -> float:
        """Percentage of records with SI-SDRi above 1 dB."""
        if not self.records:
            return float("nan")
        return 100.0 * sum(r.correct for r in self.records) / len(self.records)


def score(utterance_id: str, target, mixture, estimate) -> EvalRecord:
    target = np.asarray(target, dtype=np.float64)
    mixture = np.asarray(mixture, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    n = min(len(target), len(mixture), len(estimate))
    target, mixture, estimate = target[:n], mixture[:n], estimate[:n]
    return EvalRecord(
        utterance_id,
        si_sdr=si_sdr_db(target, estimate),
        si_sdr_mixture=si_sdr_db(target, mixture),
        sdr=sdr_metric(target, estimate),
        sdr_mixture=sdr_metric(target, mixture),
    )


def _as_extractor(model) -> Extractor:
    if hasattr(model, "extract"):
        return model.extract
    if callable(model):
        return model
    raise TypeError("model must provide extract(mixture, enrollment) or be callable")


def evaluate(model, testset, enrollment_map: Optional[Dict[str, str]] = None,
             seed: int = 0, workers: int = 1, label: str = "") -> EvalResult:
    """Score ``model`` on every mixture of ``testset`` at full length.

    ``model`` is a :class:`~tseaug.model.TSEModel` or any callable
    ``(mixture, enrollment) -> estimate`` on numpy arrays. With an
    ``enrollment_map`` each mixture uses its listed enrollment utterance;
    mixtures missing from the map (or whose enrollment is unknown) are
    skipped with a warning. Without a map, enrollments are drawn from
    the target speaker's other utterances with a fixed seed.
    """
    extract = _as_extractor(model)
    if getattr(testset, "segment_seconds", None):
        testset = dataclasses.replace(testset, segment_seconds=None)
    skipped: List[str] = []
    jobs = []
    for i, rec in enumerate(testset.mixtures):
        mid = rec.mixture_id
        enr = None
        if enrollment_map is not None:
            enr = enrollment_map.get(mid)
            if enr is None:
                log.warning("no enrollment listed for mixture %s; skipped", mid)
                skipped.append(mid)
                continue
        try:
            ex = testset.example(i, np.random.default_rng([seed, i]), enrollment_id=enr)
        except (KeyError, ValueError) as e:
            log.warning("cannot build enrollment for mixture %s (%s); skipped", mid, e)
            skipped.append(mid)
            continue
        jobs.append(ex)

    def run(ex) -> EvalRecord:
        est = extract(ex.mixture.samples, ex.enrollment.samples)
        return score(ex.mixture_id, ex.target.samples, ex.mixture.samples, est)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(ex) for ex in jobs]
    return EvalResult(records, label, skipped)


def mixture_baseline(testset) -> EvalResult:
    """Score the unprocessed mixture as the estimate (no enrollment needed)."""
    records = []
    for rec in testset.mixtures:
        target = testset.load(rec.target_path).samples
        mixture = testset.load(rec.mixture_path).samples
        records.append(score(rec.mixture_id, target, mixture, mixture))
    return EvalResult(records, "Mixture")


REPORT_COLUMNS = ("system", "n", "si_sdr", "si_sdri", "sdr", "accuracy")


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}"


def report(results: Sequence[EvalResult], labels: Optional[Sequence[str]] = None,
           baseline: bool = True) -> Tuple[str, str]:
    """Return ``(aligned_text, tsv)`` with one row per system.

    A mixture row, computed from the first result's mixture scores, leads
    the table when ``baseline`` is set. An empty ``results`` gives the
    header alone.
    """
    results = list(results)
    if labels is not None and len(labels) != len(results):
        raise ValueError("labels and results differ in length")
    rows: List[Tuple[str, ...]] = []
    if results and baseline:
        first = results[0]
        rows.append(("Mixture", str(len(first)), _fmt(first.mean_si_sdr_mixture), _fmt(0.0 if len(first) else float("nan")),
                     _fmt(first.mean_sdr_mixture), _fmt(0.0 if len(first) else float("nan"))))
    for i, res in enumerate(results):
        name = labels[i] if labels is not None else (res.label or f"system{i + 1}")
        rows.append((name, str(len(res)), _fmt(res.mean_si_sdr), _fmt(res.mean_si_sdri),
                     _fmt(res.mean_sdr), _fmt(res.accuracy)))
    header = ("System", "N", "SI-SDR (dB)", "SI-SDRi (dB)", "SDR (dB)", "Acc. (%)")
    widths = [max([len(header[j])] + [len(r[j]) for r in rows]) for j in range(len(header))]
    lines = ["  ".join(h.ljust(w) if j == 0 else h.rjust(w) for j, (h, w) in enumerate(zip(header, widths)))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))))
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(rows)
    return "\n".join(lines) + "\n", buf.getvalue()


RECORD_COLUMNS = ("utterance_id", "si_sdr", "si_sdr_mixture", "si_sdri", "sdr", "correct")


def write_records(path, result: EvalResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in result.records:
            w.writerow((r.utterance_id, f"{r.si_sdr:.4f}", f"{r.si_sdr_mixture:.4f}",
                        f"{r.si_sdri:.4f}", f"{r.sdr:.4f}", int(r.correct)))
