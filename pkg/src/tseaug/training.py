"""Training loop: gated enrollment augmentation, SSA modes, exponential LR decay, checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .augment import AugmentConfig, EnrollmentAugmenter, gate, spec_augment
from .data import AudioSignal, MixtureExample
from .extractor import ExtractorConfig, uniform_band_scheme
from .model import ModelConfig, TSEModel
from .objectives import LossValue, combined_loss, ssa_multi, ssa_single
from .speaker_encoder import EncoderConfig

log = logging.getLogger(__name__)

AUGMENTATIONS = ("noise", "reverb", "specaugment", "ssa_single", "ssa_multi")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    segment_seconds: float = 3.0
    initial_lr: float = 1e-3
    final_lr: float = 2.5e-5
    beta: float = 0.6
    gamma: float = 0.1
    augmentations: Tuple[str, ...] = ()
    curriculum: Optional[Tuple[int, int]] = None  # (plain_epochs, augmented_epochs)
    seed: int = 0
    batch_size: int = 4
    grad_clip: float = 5.0  # 0 disables clipping
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    frozen_encoder: bool = False
    # model size
    embed_dim: int = 256
    encoder_channels: int = 32
    encoder_blocks: Tuple[int, ...] = (3, 4, 6, 3)
    extractor_channels: int = 256
    extractor_depth: int = 6
    num_bands: int = 0  # 0 selects the default frequency-dependent band scheme

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 < self.final_lr <= self.initial_lr:
            raise ValueError("need 0 < final_lr <= initial_lr")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        unknown = set(self.augmentations) - set(AUGMENTATIONS)
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}; choose from {AUGMENTATIONS}")
        if len(set(self.augmentations)) != len(self.augmentations):
            raise ValueError("augmentations contain duplicates")
        if {"ssa_single", "ssa_multi"} <= set(self.augmentations):
            raise ValueError("ssa_single and ssa_multi are mutually exclusive")
        if self.curriculum is not None:
            if len(self.curriculum) != 2 or min(self.curriculum) < 0 or sum(self.curriculum) != self.epochs:
                raise ValueError(f"curriculum {self.curriculum} must be two non-negative counts summing to epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.segment_seconds is not None and self.segment_seconds <= 0:
            raise ValueError("segment_seconds must be positive")

    def model_config(self, num_speakers: int) -> ModelConfig:
        enc = EncoderConfig(embed_dim=self.embed_dim, m_channels=self.encoder_channels,
                            num_blocks=tuple(self.encoder_blocks))
        scheme = uniform_band_scheme(257, self.num_bands) if self.num_bands else None
        ext = ExtractorConfig(num_channels=self.extractor_channels, depth=self.extractor_depth,
                              embed_dim=self.embed_dim, scheme=scheme)
        return ModelConfig(encoder=enc, extractor=ext, num_speakers=num_speakers)

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Flat key = value config files
# ---------------------------------------------------------------------------

def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    kind = type(default)
    if name == "curriculum":
        if raw.lower() in ("", "none", "off"):
            return None
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if name == "augmentations":
        return tuple(v for v in raw.replace(",", " ").split() if v.lower() != "none")
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot read {raw!r} as a boolean")
    if kind is tuple:
        elem = type(default[0]) if default else float
        return tuple(elem(v) for v in raw.replace(",", " ").split())
    return kind(float(raw)) if kind is int and "e" in raw.lower() else kind(raw)


def config_from_dict(values: Dict[str, object], base: TrainConfig = TrainConfig()) -> TrainConfig:
    """Build a config from string (or already typed) values, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    parsed = {}
    for k, v in values.items():
        parsed[k] = _parse_value(k, v, getattr(base, k)) if isinstance(v, str) else v
    return dataclasses.replace(base, **parsed)


def read_flat(path) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def read_config(path, overrides: Optional[Dict[str, object]] = None) -> TrainConfig:
    """Read a flat config file; ``overrides`` win over file values."""
    values: Dict[str, object] = dict(read_flat(path))
    values.update(overrides or {})
    return config_from_dict(values)


def write_config(path, config: TrainConfig):
    lines = []
    for k, v in config.to_dict().items():
        if v is None:
            v = "none"
        elif isinstance(v, (list, tuple)):
            v = " ".join(str(x) for x in v) or "none"
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Learning rate
# ---------------------------------------------------------------------------

def lr_schedule(current_iter: int, max_iter: int, initial_lr: float, final_lr: float) -> float:
    """Exponential decay from ``initial_lr`` at iteration 0 to ``final_lr`` at ``max_iter``."""
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not 0 <= current_iter <= max_iter:
        raise ValueError(f"current_iter {current_iter} outside [0, {max_iter}]")
    if current_iter == max_iter:
        return final_lr
    return initial_lr * math.exp(current_iter / max_iter * math.log(final_lr / initial_lr))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_META_KEY = "__metadata__"


@dataclass
class Checkpoint:
    """Named parameter arrays plus epoch, config hash and free-form metadata."""

    params: Dict[str, np.ndarray]
    epoch: int = 0
    config_hash: str = ""
    metadata: Dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: torch.nn.Module, epoch: int, config_hash: str = "", metadata=None) -> "Checkpoint":
        params = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(params, epoch, config_hash, dict(metadata or {}))

    def load_into(self, model: torch.nn.Module):
        state = model.state_dict()
        missing = set(state) ^ set(self.params)
        if missing:
            raise ValueError(f"checkpoint and model parameter names differ: {sorted(missing)[:5]}")
        model.load_state_dict({k: torch.as_tensor(self.params[k]).to(state[k].dtype) for k in state})
        return model

    def save(self, path):
        meta = {"epoch": self.epoch, "config_hash": self.config_hash, "metadata": self.metadata}
        with open(path, "wb") as fh:
            np.savez(fh, **self.params, **{_META_KEY: np.array(json.dumps(meta))})

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z[_META_KEY]))
            params = {k: z[k] for k in z.files if k != _META_KEY}
        return cls(params, meta["epoch"], meta["config_hash"], meta.get("metadata", {}))

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            a = np.ascontiguousarray(self.params[k])
            h.update(k.encode())
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def average_checkpoints(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Elementwise mean of every named tensor, accumulated in float64.

    Floating tensors come back as float64; integer buffers (BatchNorm
    counters) are rounded back to their own dtype. One input is returned
    unchanged.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    first = checkpoints[0]
    if len(checkpoints) == 1:
        return Checkpoint({k: v.copy() for k, v in first.params.items()}, first.epoch,
                          first.config_hash, dict(first.metadata))
    for ck in checkpoints[1:]:
        if set(ck.params) != set(first.params):
            raise ValueError("checkpoints have different parameter names")
        for k, v in ck.params.items():
            if v.shape != first.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {first.params[k].shape}")
    out = {}
    for k, ref in first.params.items():
        mean = np.mean([np.asarray(ck.params[k], dtype=np.float64) for ck in checkpoints], axis=0)
        out[k] = mean if np.issubdtype(ref.dtype, np.floating) else np.rint(mean).astype(ref.dtype)
    meta = dict(first.metadata)
    meta["averaged_epochs"] = [ck.epoch for ck in checkpoints]
    return Checkpoint(out, max(ck.epoch for ck in checkpoints), first.config_hash, meta)


def build_model(config: TrainConfig, num_speakers: int) -> TSEModel:
    model = TSEModel(config.model_config(num_speakers))
    if config.frozen_encoder:
        model.encoder.freeze()
    return model


def model_from_checkpoint(ckpt: Checkpoint) -> TSEModel:
    """Rebuild a model from a checkpoint written by :class:`Trainer`."""
    try:
        cfg = config_from_dict(ckpt.metadata["train_config"])
        n = int(ckpt.metadata["num_speakers"])
    except KeyError as e:
        raise ValueError(f"checkpoint lacks model metadata ({e})") from None
    model = build_model(cfg, n)
    ckpt.load_into(model)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    mixture: torch.Tensor  # (B, L)
    target: torch.Tensor  # (B, L)
    enrollments: List[np.ndarray]
    labels: torch.Tensor
    ids: List[str]


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    loss: Optional[LossValue]
    events: List[List[str]]
    skipped: bool = False

    def row(self) -> Dict[str, object]:
        comps = self.loss.components if self.loss is not None else {}
        counts: Dict[str, int] = {}
        for ev in self.events:
            for e in ev:
                counts[e] = counts.get(e, 0) + 1
        return {
            "step": self.step, "epoch": self.epoch, "lr": f"{self.lr:.10g}",
            "total": f"{self.loss.item():.6f}" if self.loss is not None and not self.skipped else "nan",
            **{k: f"{comps[k]:.6f}" if k in comps else "" for k in LOG_COMPONENTS},
            "skipped": int(self.skipped),
            "events": ";".join(f"{k}:{v}" for k, v in sorted(counts.items())) or "-",
        }


LOG_COMPONENTS = ("si_sdr", "ce", "l1", "l2")
LOG_FIELDS = ("step", "epoch", "lr", "total") + LOG_COMPONENTS + ("skipped", "events")


def collate(examples: Sequence[MixtureExample], speaker_index: Dict[str, int]) -> Batch:
    return Batch(
        mixture=torch.as_tensor(np.stack([e.mixture.samples for e in examples]), dtype=torch.float32),
        target=torch.as_tensor(np.stack([e.target.samples for e in examples]), dtype=torch.float32),
        enrollments=[e.enrollment.samples for e in examples],
        labels=torch.as_tensor([speaker_index[e.target_speaker_id] for e in examples]),
        ids=[e.mixture_id for e in examples],
    )


class Trainer:
    """Owns the model, optimizer and RNG streams for one training run.

    ``dataset`` needs ``len``, ``speakers`` and ``example(index, rng)``
    (see :class:`tseaug.data.TseDataset`). Waveform augmentations and
    SpecAugment fire independently per example with probability ``beta``;
    ``ssa_single`` is gated the same way while ``ssa_multi`` uses ``beta``
    as its loss weight.
    """

    def __init__(self, config: TrainConfig, dataset, model: Optional[TSEModel] = None,
                 augment_config: Optional[AugmentConfig] = None, noise_source=None, rir_generator=None):
        if len(dataset) == 0:
            raise ValueError("training set is empty")
        self.config = config
        if dataclasses.is_dataclass(dataset) and hasattr(dataset, "segment_seconds"):
            dataset = dataclasses.replace(dataset, segment_seconds=config.segment_seconds)
        self.dataset = dataset
        self.speakers = list(dataset.speakers)
        self.speaker_index = {s: i for i, s in enumerate(self.speakers)}
        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.model = model if model is not None else build_model(config, max(2, len(self.speakers)))
        if config.frozen_encoder and not self.model.encoder.frozen:
            self.model.encoder.freeze()
        aug_cfg = augment_config or AugmentConfig(beta=config.beta)
        if aug_cfg.beta != config.beta:
            aug_cfg = dataclasses.replace(aug_cfg, beta=config.beta)
        self.augment_config = aug_cfg
        kinds = tuple(k for k in config.augmentations if k in ("noise", "reverb"))
        self.augmenter = EnrollmentAugmenter(aug_cfg, kinds, noise_source, rir_generator)
        params = [p for p in self.model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(params, lr=config.initial_lr, betas=config.adam_betas, eps=config.adam_eps)
        self.steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
        self.max_iter = config.epochs * self.steps_per_epoch
        self.step = 0
        self.history: List[StepRecord] = []

    def metadata(self) -> Dict:
        cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.to_dict().items()}
        return {"train_config": cfg, "num_speakers": self.model.config.num_speakers, "speakers": self.speakers}

    def augment_enabled(self, epoch: int) -> bool:
        cur = self.config.curriculum
        return not (cur is not None and epoch < cur[0])

    def make_batch(self, indices: Sequence[int]) -> Batch:
        examples = [self.dataset.example(int(i), self.rng) for i in indices]
        return collate(examples, self.speaker_index)

    def compute_loss(self, batch: Batch, augment: bool) -> Tuple[LossValue, List[List[str]]]:
        cfg = self.config
        augs = set(cfg.augmentations) if augment else set()
        events: List[List[str]] = []
        enrollments = []
        for wav in batch.enrollments:
            c, ev = self.augmenter(AudioSignal(wav), self.rng, enabled=augment)
            enrollments.append(torch.as_tensor(c.samples, dtype=torch.float32))
            events.append(ev)

        transform = None
        if "specaugment" in augs:
            masked = [gate(cfg.beta, self.rng) for _ in enrollments]
            for ev, m in zip(events, masked):
                if m:
                    ev.append("specaugment")

            def transform(feats, i):
                return spec_augment(feats, self.augment_config, self.rng) if masked[i] else feats

        x, s, y = batch.mixture, batch.target, batch.labels
        if "ssa_multi" in augs:
            for ev in events:
                ev.append("ssa_multi")
            loss = ssa_multi(x, enrollments, s, y, self.model, cfg.gamma, cfg.beta, transform)
        elif "ssa_single" in augs:
            fired = [gate(cfg.beta, self.rng) for _ in enrollments]
            for ev, f in zip(events, fired):
                if f:
                    ev.append("ssa_single")
            loss = ssa_single(x, enrollments, s, y, self.model, cfg.gamma, fired, transform)
        else:
            est, logits = self.model(x, enrollments, transform)
            loss = combined_loss(s, est, logits, y, cfg.gamma)
        return loss, events

    def train_step(self, batch: Batch, epoch: int = 0, augment: bool = True) -> StepRecord:
        lr = lr_schedule(min(self.step, self.max_iter), self.max_iter, self.config.initial_lr, self.config.final_lr)
        for g in self.optimizer.param_groups:
            g["lr"] = lr
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss, events = self.compute_loss(batch, augment)
        rec = StepRecord(self.step, epoch, lr, loss, events)
        if not torch.isfinite(loss.total):
            log.warning("non-finite loss at step %d (mixtures %s); step skipped", self.step, ",".join(batch.ids))
            rec.skipped = True
        else:
            loss.total.backward()
            if self.config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
            self.optimizer.step()
        self.step += 1
        self.history.append(rec)
        return rec

    def checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint.from_model(self.model, epoch, self.config.hash(), self.metadata())

    def fit(self, out_dir=None, log_path=None) -> List[Checkpoint]:
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_config(out / "train.conf", self.config)
        if log_path is None and out is not None:
            log_path = out / "train_log.tsv"
        log_fh = open(log_path, "w", newline="") if log_path is not None else None
        writer = None
        if log_fh is not None:
            writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS, delimiter="\t")
            writer.writeheader()
        checkpoints = []
        try:
            for epoch in range(self.config.epochs):
                augment = self.augment_enabled(epoch)
                order = self.rng.permutation(len(self.dataset))
                bs = self.config.batch_size
                for start in range(0, len(order), bs):
                    rec = self.train_step(self.make_batch(order[start:start + bs]), epoch, augment)
                    if writer is not None:
                        writer.writerow(rec.row())
                ckpt = self.checkpoint(epoch)
                checkpoints.append(ckpt)
                if out is not None:
                    ckpt.save(out / f"epoch_{epoch:04d}.npz")
                last = [r.loss.item() for r in self.history[-self.steps_per_epoch:] if not r.skipped]
                log.info("epoch %d done, mean loss %.3f", epoch, float(np.mean(last)) if last else float("nan"))
        finally:
            if log_fh is not None:
                log_fh.close()
        return checkpoints


def run_training(config: TrainConfig, dataset, out_dir=None, **kwargs) -> List[Checkpoint]:
    """Train for ``config.epochs`` epochs and return one checkpoint per epoch."""
    return Trainer(config, dataset, **kwargs).fit(out_dir)


def read_train_log(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
