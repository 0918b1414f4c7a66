"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
IGM_SEED overrides the configured seed; IGM_THREADS caps torch threads.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import ablation as ablation_mod
from .adapter import AdapterConfig
from .checkpoint import checkpoint_hash
from .config import load_run_config
from .data import DatasetManifest, SkeletonSequence, generate_synthetic_dataset
from .dataio import load_dataset, save_dataset
from .diffusion import masked_reconstruction
from .errors import ConfigError, ConvergenceError, FormatError
from .evaluate import (
    corruption_protocol,
    extract_features,
    feature_frechet,
    knn_eval,
    linear_probe,
    mpjpe,
    spectrum,
)
from .theory import SUITES
from .train import TrainingAborted, load_trained, pretrain


def _write_metric_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "value", "seed", "ckpt_hash"])
        writer.writeheader()
        writer.writerows(rows)


def _labels(sequences: list[SkeletonSequence]) -> np.ndarray:
    return np.array([s.label for s in sequences])


def mask_cells(
    sequences: list[SkeletonSequence], ratio: float, rng: np.random.Generator
) -> tuple[list[SkeletonSequence], np.ndarray]:
    """Zero a Bernoulli(ratio) subset of (frame, joint) cells per clip.

    Returns the masked clips and the evaluation region (cells that were
    both valid and removed).
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must be in (0, 1), got {ratio}")
    masked, regions = [], []
    for seq in sequences:
        drop = rng.uniform(size=seq.mask.shape) < ratio
        if drop.all():  # keep at least one visible cell as anchor
            drop.flat[0] = False
        out = seq.copy()
        region = drop & out.mask
        out.mask &= ~drop
        out.data[~out.mask] = 0.0
        masked.append(out)
        regions.append(region)
    return masked, np.stack(regions)


def cmd_gen_data(args) -> int:
    sequences = generate_synthetic_dataset(
        args.classes, args.per_class, frames=args.frames, seed=args.seed
    )
    manifest = DatasetManifest(
        name=args.name, num_classes=args.classes,
        num_samples=len(sequences), split=args.split, seed=args.seed,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, sequences, manifest)
    print(f"wrote {len(sequences)} sequences to {args.out}")
    return 0


def _load_config_with_env(path: str):
    config = load_run_config(path)
    env_seed = os.environ.get("IGM_SEED")
    if env_seed is not None:
        config = dataclasses.replace(config, seed=int(env_seed))
    return config


def cmd_pretrain(args) -> int:
    config = _load_config_with_env(args.config)
    result = pretrain(config, args.out, resume=args.resume, log=print)
    print(f"final checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics}")
    return 0


def _eval_setup(args):
    encoder, generator, config, header = load_trained(args.ckpt)
    return encoder, generator, config, header, checkpoint_hash(args.ckpt)


def cmd_probe(args) -> int:
    encoder, _, _, header, ckpt_hash = _eval_setup(args)
    train_seqs, _ = load_dataset(args.train_data)
    val_seqs, _ = load_dataset(args.val_data)
    acc = linear_probe(
        extract_features(encoder, train_seqs), _labels(train_seqs),
        extract_features(encoder, val_seqs), _labels(val_seqs),
        epochs=args.epochs, lr=args.lr,
    )
    rows = [{"metric": "linear_probe_accuracy", "value": acc,
             "seed": header["seed"], "ckpt_hash": ckpt_hash}]
    _write_metric_csv(Path(args.out), rows)
    print(f"linear probe accuracy: {acc:.4f}")
    return 0


def cmd_knn(args) -> int:
    encoder, _, _, header, ckpt_hash = _eval_setup(args)
    train_seqs, _ = load_dataset(args.train_data)
    val_seqs, _ = load_dataset(args.val_data)
    acc = knn_eval(
        extract_features(encoder, train_seqs), _labels(train_seqs),
        extract_features(encoder, val_seqs), _labels(val_seqs), k=args.k,
    )
    rows = [{"metric": f"knn{args.k}_accuracy", "value": acc,
             "seed": header["seed"], "ckpt_hash": ckpt_hash}]
    _write_metric_csv(Path(args.out), rows)
    print(f"knn (k={args.k}) accuracy: {acc:.4f}")
    return 0


def cmd_spectrum(args) -> int:
    encoder, _, config, header, ckpt_hash = _eval_setup(args)
    sequences, _ = load_dataset(args.data)
    raw = spectrum(extract_features(encoder, sequences))
    filtered = spectrum(extract_features(encoder, sequences, adapter_cfg=config.adapter))
    rows = [
        {"metric": "effective_rank_raw", "value": raw.effective_rank,
         "seed": header["seed"], "ckpt_hash": ckpt_hash},
        {"metric": "effective_rank_filtered", "value": filtered.effective_rank,
         "seed": header["seed"], "ckpt_hash": ckpt_hash},
    ]
    for i, sv in enumerate(raw.singular_values):
        rows.append({"metric": f"singular_value_raw_{i}", "value": float(sv),
                     "seed": header["seed"], "ckpt_hash": ckpt_hash})
    for i, sv in enumerate(filtered.singular_values):
        rows.append({"metric": f"singular_value_filtered_{i}", "value": float(sv),
                     "seed": header["seed"], "ckpt_hash": ckpt_hash})
    _write_metric_csv(Path(args.out), rows)
    print(f"effective rank raw {raw.effective_rank:.3f} "
          f"filtered {filtered.effective_rank:.3f}")
    return 0


def cmd_eval_corrupt(args) -> int:
    encoder, generator, config, header, ckpt_hash = _eval_setup(args)
    train_seqs, _ = load_dataset(args.train_data)
    val_seqs, _ = load_dataset(args.val_data)
    table = corruption_protocol(
        encoder, generator, config.adapter, config.schedule.build(),
        train_seqs, val_seqs, with_denoise=not args.no_denoise, seed=args.seed,
    )
    rows = [
        {"metric": f"knn_{row['corruption']}_{row['mode']}_t{row['t_start']}",
         "value": row["accuracy"], "seed": args.seed, "ckpt_hash": ckpt_hash}
        for row in table
    ]
    _write_metric_csv(Path(args.out), rows)
    for row in table:
        print(f"{row['corruption']:>34} {row['mode']:>8} t={row['t_start']:<3}"
              f" acc={row['accuracy']:.4f}")
    return 0


def cmd_generate(args) -> int:
    encoder, generator, config, header, _ = _eval_setup(args)
    sequences, manifest = load_dataset(args.data)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    masked, _ = mask_cells(sequences, args.mask_ratio, rng)
    data = np.stack([s.data for s in masked])
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(data, dtype=dtype)
    onestep_t = args.onestep_t if args.onestep else None
    recon = masked_reconstruction(
        encoder, generator, config.adapter, x, config.schedule.build(), rng,
        onestep_t=onestep_t,
    ).double().numpy()
    out_seqs = [
        SkeletonSequence(
            recon[i].astype(np.float32).astype(np.float64),
            np.ones(sequences[i].mask.shape, dtype=bool),
            sequences[i].label,
        )
        for i in range(len(sequences))
    ]
    out_manifest = DatasetManifest(
        name=f"{manifest.name}-generated", num_classes=manifest.num_classes,
        num_samples=len(out_seqs), split=manifest.split, seed=args.seed,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, out_seqs, out_manifest)
    print(f"wrote {len(out_seqs)} generated sequences to {args.out}")
    return 0


def cmd_mpjpe(args) -> int:
    encoder, generator, config, header, ckpt_hash = _eval_setup(args)
    sequences, _ = load_dataset(args.data)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    masked, region = mask_cells(sequences, args.mask_ratio, rng)
    data = np.stack([s.data for s in sequences])
    masked_data = np.stack([s.data for s in masked])
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(masked_data, dtype=dtype)
    onestep_t = args.onestep_t if args.onestep else None
    recon = masked_reconstruction(
        encoder, generator, config.adapter, x, config.schedule.build(), rng,
        onestep_t=onestep_t,
    ).double().numpy()

    model_error = mpjpe(recon, data, region)
    mean_pose = data.mean(axis=(0, 1))
    baseline = np.broadcast_to(mean_pose, data.shape)
    baseline_error = mpjpe(baseline, data, region)
    gen_feats = extract_features(encoder, [
        SkeletonSequence(recon[i].astype(np.float32).astype(np.float64),
                         np.ones(sequences[i].mask.shape, dtype=bool),
                         sequences[i].label)
        for i in range(len(sequences))
    ])
    real_feats = extract_features(encoder, sequences)
    frechet = feature_frechet(real_feats, gen_feats)

    rows = [
        {"metric": "mpjpe_masked_mm", "value": model_error, "seed": args.seed, "ckpt_hash": ckpt_hash},
        {"metric": "mpjpe_mean_pose_baseline_mm", "value": baseline_error, "seed": args.seed, "ckpt_hash": ckpt_hash},
        {"metric": "feature_frechet", "value": frechet, "seed": args.seed, "ckpt_hash": ckpt_hash},
    ]
    _write_metric_csv(Path(args.out), rows)
    print(f"masked-region error: {model_error:.1f} mm "
          f"(mean-pose baseline {baseline_error:.1f} mm, feature-frechet {frechet:.4f})")
    return 0


def cmd_theory_check(args) -> int:
    report = SUITES[args.suite]()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    print(f"suite {args.suite}: {'pass' if report['pass'] else 'FAIL'} -> {args.out}")
    return 0 if report["pass"] else 2


def cmd_ablate(args) -> int:
    config = _load_config_with_env(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = ablation_mod.ablation_grid(config, seeds, args.out, log=print)
    csv_path, json_path = ablation_mod.write_report(rows, args.out)
    summary = ablation_mod.summarize(rows)
    for name, stats in summary.items():
        print(f"{name:>10}: knn {stats['knn_mean']:.4f} probe {stats['probe_mean']:.4f}")
    print(f"report: {csv_path}, {json_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="igm",
        description="Idempotent conditional diffusion on skeleton clips: "
                    "data, training, evaluation, and theory checks.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a labeled synthetic dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--split", default="train")
    p.add_argument("--name", default="synthetic")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train encoder and generator")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("knn", help="cosine k-nearest-neighbor evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("spectrum", help="singular-value spectrum and effective rank")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("eval-corrupt", help="corruption-robustness protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-denoise", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_corrupt)

    p = sub.add_parser("generate", help="reconstruct masked clips")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask-ratio", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--onestep", action="store_true")
    p.add_argument("--onestep-t", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mpjpe", help="masked-reconstruction error vs mean-pose baseline")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--onestep", action="store_true")
    p.add_argument("--onestep-t", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mpjpe)

    p = sub.add_parser("theory-check", help="run a numerical theory suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("ablate", help="module-combination grid over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    threads = os.environ.get("IGM_THREADS")
    if threads is not None:
        torch.set_num_threads(max(1, int(threads)))

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, FormatError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
