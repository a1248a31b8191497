"""Command line entry point: ``tseaug <subcommand> [options]``.

Exit codes: 0 success, 1 invalid usage or input, 2 failure while running.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

log = logging.getLogger("tseaug")

# keys a training config file may carry besides the TrainConfig fields
DATA_KEYS = ("mixtures", "utterances", "noise_manifest", "pretrained_encoder")


class ValidationError(Exception):
    pass


@contextlib.contextmanager
def validating():
    """Turn input-shaped errors raised inside the block into :class:`ValidationError`."""
    try:
        yield
    except ValidationError:
        raise
    except (ValueError, KeyError, OSError, TypeError) as e:
        raise ValidationError(str(e)) from e


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def artifact_hash() -> str:
    """sha256 over the package sources, in path order (identifies the code that ran)."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config_path: Optional[str]
    seed: int
    artifact_hash: str
    output_dir: str
    settings: Dict = field(default_factory=dict)
    created: float = field(default_factory=time.time)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.command}.manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path


def _manifest(args, out_dir, config_path=None, **settings) -> RunManifest:
    m = RunManifest(args.command, list(args.argv), str(config_path) if config_path else None,
                    args.seed, artifact_hash(), str(out_dir), settings)
    m.write(out_dir)
    return m


def _check_device(device: str):
    if device != "cpu":
        raise ValidationError(f"device {device!r} is not supported by this build; use cpu")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate_data(args) -> int:
    from .data import read_librimix_metadata, write_mixture_manifest
    from .synth import make_corpus, write_corpus

    out = Path(args.out)
    with validating():
        if args.librimix_csv:
            records = read_librimix_metadata(args.librimix_csv, args.librimix_root)
    _manifest(args, out, librimix_csv=args.librimix_csv, num_speakers=args.num_speakers,
              num_mixtures=args.num_mixtures, seconds=args.seconds, noise_snr=args.noise_snr)
    if args.librimix_csv:
        path = out / "mixtures.tsv"
        write_mixture_manifest(path, records)
        print(f"wrote {len(records)} mixture records to {path}")
        return 0
    with validating():
        corpus = make_corpus(args.num_speakers, args.utts_per_speaker, args.num_mixtures, args.seconds,
                             enroll_seconds=args.enroll_seconds, noise_snr_db=args.noise_snr, seed=args.seed)
    utt, mix = write_corpus(corpus, out)
    print(f"wrote {len(corpus.mixtures)} mixtures: {mix}\nutterances: {utt}")
    return 0


def cmd_augment_preview(args) -> int:
    from .augment import AugmentConfig, apply_reverb, generate_rir, mask_matrix, mix_noise, schroeder_t60, spec_augment
    from .data import read_wav, write_wav
    from .features import fbank
    from .synth import white_noise

    out = Path(args.out)
    kinds = [k for a in args.aug for k in a.split(",") if k]
    with validating():
        bad = set(kinds) - {"noise", "reverb", "specaugment"}
        if bad:
            raise ValidationError(f"unknown augmentation(s) {sorted(bad)}")
        c = read_wav(args.input)
        noise = read_wav(args.noise) if args.noise else None
        config = AugmentConfig()
    _manifest(args, out, input=args.input, aug=kinds, snr=args.snr, t60=args.t60)
    rng = np.random.default_rng(args.seed)
    write_wav(out / "before.wav", c)
    y = c
    for kind in kinds:
        if kind == "noise":
            snr = args.snr if args.snr is not None else float(rng.uniform(*config.snr_range_db))
            y = mix_noise(y, noise if noise is not None else white_noise(len(y), rng), snr)
            print(f"noise: snr {snr:.2f} dB")
        elif kind == "reverb":
            h = generate_rir(config, rng, t60=args.t60)
            y = apply_reverb(y, h)
            measured = schroeder_t60(h.taps, h.sample_rate)
            room = " x ".join(f"{float(v):.2f}" for v in h.room)
            print(f"reverb: target t60 {h.t60:.3f} s, measured {measured:.3f} s, room {room} m")
    write_wav(out / "after.wav", y)
    if "specaugment" in kinds:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        feats = fbank(y.samples).numpy()
        masked, params = spec_augment(feats, config, rng, return_params=True)
        mask = mask_matrix(*feats.shape, params)
        fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
        for ax, img, title in zip(axes, (feats, mask, masked), ("fbank", "mask", "masked fbank")):
            ax.imshow(np.asarray(img, dtype=float).T, origin="lower", aspect="auto")
            ax.set_title(title)
        axes[-1].set_xlabel("frame")
        fig.tight_layout()
        fig.savefig(out / "specaugment.png", dpi=100)
        plt.close(fig)
        np.save(out / "specaugment_mask.npy", mask)
        print(f"specaugment: {params}")
    print(f"wrote {out / 'after.wav'}")
    return 0


def _load_dataset(mixtures, utterances, segment_seconds):
    from .data import TseDataset, read_manifest, read_mixture_manifest

    return TseDataset(read_mixture_manifest(mixtures), read_manifest(utterances), segment_seconds)


def cmd_train(args) -> int:
    import torch

    from .augment import ManifestNoiseSource
    from .data import TseDataset, read_manifest
    from .synth import SyntheticNoiseSource, make_corpus
    from .training import Checkpoint, Trainer, build_model, config_from_dict, read_flat

    with validating():
        overrides: Dict[str, object] = {}
        for item in args.set or []:
            if "=" not in item:
                raise ValidationError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        if args.epochs is not None:
            overrides["epochs"] = str(args.epochs)
        if args.seed_given:
            overrides["seed"] = str(args.seed)
        data = {k: overrides.pop(k) for k in DATA_KEYS if k in overrides}
        if args.config:
            file_values = read_flat(args.config)
            data = {**{k: file_values.pop(k) for k in DATA_KEYS if k in file_values}, **data}
            file_values.update(overrides)
            config = config_from_dict(file_values)
        else:
            config = config_from_dict(overrides)
        for k in ("mixtures", "utterances"):
            if args.__dict__.get(k):
                data[k] = args.__dict__[k]
        if bool(data.get("mixtures")) != bool(data.get("utterances")):
            raise ValidationError("mixtures and utterances manifests must be given together")
        if data.get("mixtures"):
            dataset = _load_dataset(data["mixtures"], data["utterances"], config.segment_seconds)
        else:
            log.warning("no manifests given; training on a synthetic toy corpus")
            corpus = make_corpus(seed=config.seed)
            dataset = TseDataset(corpus.mixtures, corpus.utterances, config.segment_seconds, load=corpus.load)
        noise_source = None
        if "noise" in config.augmentations:
            if data.get("noise_manifest"):
                noise_source = ManifestNoiseSource(read_manifest(data["noise_manifest"]))
            else:
                noise_source = SyntheticNoiseSource()
        pretrained = Checkpoint.load(data["pretrained_encoder"]) if data.get("pretrained_encoder") else None
    args.seed = config.seed
    out = Path(args.out or f"runs/{Path(args.config).stem if args.config else 'train'}-seed{config.seed}")
    _manifest(args, out, args.config, train_config=config.to_dict(), data=data)
    torch.manual_seed(config.seed)
    model = build_model(config, max(2, len(dataset.speakers)))
    if pretrained is not None:
        with validating():
            model.encoder.load_state_dict({k: torch.as_tensor(v) for k, v in pretrained.params.items()})
        if config.frozen_encoder:
            model.encoder.freeze()
    trainer = Trainer(config, dataset, model=model, noise_source=noise_source)
    checkpoints = trainer.fit(out)
    final = checkpoints[-1]
    print(f"trained {len(checkpoints)} epochs, {trainer.step} steps; final checkpoint hash {final.param_hash()}")
    (out / "final_hash.txt").write_text(final.param_hash() + "\n")
    return 0


def cmd_evaluate(args) -> int:
    from .data import read_enrollment_map
    from .evaluation import evaluate, mixture_baseline, report, write_records
    from .training import Checkpoint, model_from_checkpoint

    with validating():
        dataset = _load_dataset(args.mixtures, args.utterances, None)
        emap = read_enrollment_map(args.enrollment_map) if args.enrollment_map else None
        model = None
        if args.checkpoint:
            model = model_from_checkpoint(Checkpoint.load(args.checkpoint))
        elif not args.baseline_only:
            raise ValidationError("--checkpoint is required unless --baseline-only is given")
    out = Path(args.out)
    _manifest(args, out, checkpoint=args.checkpoint, mixtures=args.mixtures,
              utterances=args.utterances, enrollment_map=args.enrollment_map)
    if model is None:
        result = mixture_baseline(dataset)
        results, baseline = [result], False
    else:
        result = evaluate(model, dataset, emap, seed=args.seed, workers=args.workers,
                          label=args.label or Path(args.checkpoint).stem)
        results, baseline = [result], True
    write_records(out / "records.tsv", result)
    text, tsv = report(results, baseline=baseline)
    (out / "summary.tsv").write_text(tsv)
    print(text, end="")
    if not result.records:
        print("no evaluable mixtures", file=sys.stderr)
        return 2
    return 0


def cmd_average_checkpoints(args) -> int:
    from .training import Checkpoint, average_checkpoints

    d = Path(args.dir)
    with validating():
        if args.last < 1:
            raise ValidationError("--last must be at least 1")
        paths = sorted(d.glob(args.pattern))
        if not paths:
            raise ValidationError(f"no checkpoints matching {args.pattern} in {d}")
        chosen = paths[-args.last:]
        checkpoints = [Checkpoint.load(p) for p in chosen]
    out = Path(args.out) if args.out else d / "averaged.npz"
    _manifest(args, out.parent, inputs=[str(p) for p in chosen], output=str(out))
    with validating():
        avg = average_checkpoints(checkpoints)
    avg.save(out)
    print(f"averaged {len(chosen)} checkpoints -> {out} ({avg.param_hash()[:16]})")
    return 0


def cmd_convert_weights(args) -> int:
    """Convert a torch state dict (or npz) of speaker encoder weights into the checkpoint format."""
    from .training import Checkpoint

    with validating():
        src = Path(args.input)
        if src.suffix == ".npz":
            with np.load(src) as z:
                params = {k: z[k] for k in z.files}
        else:
            import torch

            state = torch.load(src, map_location="cpu", weights_only=True)
            if isinstance(state, dict) and "state_dict" in state:
                state = state["state_dict"]
            params = {k: v.numpy() for k, v in state.items() if hasattr(v, "numpy")}
        if args.strip_prefix:
            params = {k[len(args.strip_prefix):] if k.startswith(args.strip_prefix) else k: v
                      for k, v in params.items()}
        if args.keep_prefix:
            params = {k[len(args.keep_prefix):]: v for k, v in params.items() if k.startswith(args.keep_prefix)}
        if not params:
            raise ValidationError("no tensors left after prefix filtering")
    out = Path(args.out)
    _manifest(args, out.parent, input=str(src), output=str(out))
    Checkpoint(params, 0, "", {"component": "speaker_encoder", "source": src.name}).save(out)
    print(f"wrote {len(params)} tensors to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0; overrides config)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers where supported")
    common.add_argument("--device", default="cpu", help="compute device (cpu)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tseaug", description="Target speaker extraction with enrollment augmentation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate-data", parents=[common], help="write a synthetic corpus or ingest LibriMix metadata")
    s.add_argument("--out", required=True)
    s.add_argument("--num-speakers", type=int, default=4)
    s.add_argument("--utts-per-speaker", type=int, default=3)
    s.add_argument("--num-mixtures", type=int, default=8)
    s.add_argument("--seconds", type=float, default=1.0)
    s.add_argument("--enroll-seconds", type=float, default=None)
    s.add_argument("--noise-snr", type=float, default=None, help="add white noise at this SNR (dB)")
    s.add_argument("--librimix-csv", default=None, help="LibriMix metadata CSV to convert instead")
    s.add_argument("--librimix-root", default=None, help="directory holding Libri2Mix/")
    s.set_defaults(func=cmd_simulate_data)

    s = sub.add_parser("augment-preview", parents=[common], help="augment one WAV and write before/after files")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--aug", action="append", required=True, help="noise, reverb, specaugment (repeat or comma-join)")
    s.add_argument("--snr", type=float, default=None)
    s.add_argument("--t60", type=float, default=None)
    s.add_argument("--noise", default=None, help="noise WAV (default: white noise)")
    s.add_argument("--out", default="augment_preview")
    s.set_defaults(func=cmd_augment_preview)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--config", default=None)
    s.add_argument("--mixtures", default=None)
    s.add_argument("--utterances", default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a test set")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--mixtures", required=True)
    s.add_argument("--utterances", required=True)
    s.add_argument("--enrollment-map", default=None)
    s.add_argument("--baseline-only", action="store_true", help="score the unprocessed mixtures")
    s.add_argument("--label", default=None)
    s.add_argument("--out", default="eval")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("average-checkpoints", parents=[common], help="average the last k epoch checkpoints")
    s.add_argument("--dir", required=True)
    s.add_argument("--last", type=int, default=5)
    s.add_argument("--pattern", default="epoch_*.npz")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_average_checkpoints)

    s = sub.add_parser("convert-weights", parents=[common], help="import external speaker encoder weights")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strip-prefix", default=None)
    s.add_argument("--keep-prefix", default=None, help="keep only keys with this prefix (and drop it)")
    s.set_defaults(func=cmd_convert_weights)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    args.argv = argv
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_device(args.device)
        if args.workers < 1:
            raise ValidationError("--workers must be at least 1")
        return args.func(args)
    except ValidationError as e:
        print(f"tseaug {args.command}: error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:  # runtime failure
        log.error("%s failed: %s", args.command, e, exc_info=args.verbose)
        return 2


if __name__ == "__main__":
    sys.exit(main())
