"""Module-combination grid: filter on/off x idempotency losses, over seeds."""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_hash
from .config import RunConfig
from .dataio import load_dataset
from .errors import ConfigError
from .evaluate import extract_features, knn_eval, linear_probe
from .train import load_trained, pretrain

# (name, filter enabled, feature loss, distribution loss)
ABLATION_ROWS = (
    ("none", False, False, False),
    ("ffm", True, False, False),
    ("ffm+feat", True, True, False),
    ("ffm+dist", True, False, True),
    ("full", True, True, True),
)


def derived_config(base: RunConfig, use_ffm: bool, use_feat: bool, use_dist: bool, seed: int) -> RunConfig:
    adapter = dataclasses.replace(base.adapter, eta=base.adapter.eta if use_ffm else 0.0)
    weights = dataclasses.replace(
        base.weights,
        w_feat=base.weights.w_feat if use_feat else 0.0,
        w_dist=base.weights.w_dist if use_dist else 0.0,
    )
    return dataclasses.replace(base, adapter=adapter, weights=weights, seed=seed)


def evaluate_checkpoint(checkpoint: Path, train_path: Path, val_path: Path, probe: bool = True) -> dict:
    encoder, _, _, _ = load_trained(checkpoint)
    train_seqs, _ = load_dataset(train_path)
    val_seqs, _ = load_dataset(val_path)
    train_feats = extract_features(encoder, train_seqs)
    val_feats = extract_features(encoder, val_seqs)
    train_labels = np.array([s.label for s in train_seqs])
    val_labels = np.array([s.label for s in val_seqs])
    out = {"knn": knn_eval(train_feats, train_labels, val_feats, val_labels, k=1)}
    if probe:
        out["probe"] = linear_probe(train_feats, train_labels, val_feats, val_labels)
    return out


def ablation_grid(
    base_config: RunConfig,
    seeds: tuple[int, ...],
    out_dir: str | Path,
    log=None,
) -> list[dict]:
    """Train and evaluate every grid row for every seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if base_config.val_data is None:
        raise ConfigError("ablation needs val_data in the base config")

    rows = []
    for name, use_ffm, use_feat, use_dist in ABLATION_ROWS:
        for seed in seeds:
            config = derived_config(base_config, use_ffm, use_feat, use_dist, seed)
            run_dir = out_dir / f"{name.replace('+', '_')}_s{seed}"
            if log:
                log(f"training {name} seed {seed} -> {run_dir}")
            result = pretrain(config, run_dir)
            train_path = config.resolve_train_data(run_dir)
            val_path = config.resolve_val_data(run_dir)
            metrics = evaluate_checkpoint(result.checkpoint, train_path, val_path)
            rows.append({
                "row": name, "seed": seed,
                "eta": config.adapter.eta,
                "w_feat": config.weights.w_feat, "w_dist": config.weights.w_dist,
                "knn": metrics["knn"], "probe": metrics["probe"],
                "checkpoint": str(result.checkpoint),
                "ckpt_hash": checkpoint_hash(result.checkpoint),
            })
    return rows


def summarize(rows: list[dict]) -> dict:
    summary = {}
    for name, *_ in ABLATION_ROWS:
        knn = [r["knn"] for r in rows if r["row"] == name]
        probe = [r["probe"] for r in rows if r["row"] == name]
        summary[name] = {
            "knn_mean": float(np.mean(knn)), "knn_per_seed": knn,
            "probe_mean": float(np.mean(probe)), "probe_per_seed": probe,
        }
    return summary


def write_report(rows: list[dict], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    json_path = out_dir / "ablation.json"
    with open(json_path, "w") as fh:
        json.dump({"rows": rows, "summary": summarize(rows)}, fh, indent=2)
    return csv_path, json_path
