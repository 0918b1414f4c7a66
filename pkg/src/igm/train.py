"""Deterministic training loop with resumable checkpoints.

All per-step randomness (batch choice, augmentations, diffusion steps,
noise) comes from a generator keyed by (seed, step), so resuming from a
checkpoint at step s reproduces the uninterrupted run exactly.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    checkpoint_hash,
    load_checkpoint,
    load_module_arrays,
    load_optimizer_arrays,
    module_arrays,
    optimizer_arrays,
    save_checkpoint,
)
from .config import RunConfig, run_config_from_dict, run_config_to_dict
from .dataio import load_dataset
from .diffusion import Generator
from .errors import ConfigError
from .losses import compute_losses
from .network import Encoder, parameter_count

METRICS_COLUMNS = ("step", "loss_gen", "loss_feat", "loss_dist", "loss_total", "wall_time", "seed")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    steps: int
    final_losses: dict[str, float]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))


def _init_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0x1717,)).generate_state(1)[0])


def build_models(config: RunConfig) -> tuple[Encoder, Generator]:
    torch.manual_seed(_init_seed(config.seed))
    encoder = Encoder(config.net, max_timestep=config.schedule.steps)
    generator = Generator(config.net, max_timestep=config.schedule.steps)
    return encoder, generator


def named_parameters(encoder: Encoder, generator: Generator) -> list[tuple[str, torch.nn.Parameter]]:
    pairs = [(f"encoder/{n}", p) for n, p in encoder.named_parameters()]
    pairs += [(f"generator/{n}", p) for n, p in generator.named_parameters()]
    return pairs


def _save(path: Path, config: RunConfig, step: int, encoder, generator, optimizer, named) -> Path:
    arrays = module_arrays(encoder, "encoder")
    arrays.update(module_arrays(generator, "generator"))
    arrays.update(optimizer_arrays(optimizer, named))
    header = {"config": run_config_to_dict(config), "step": step, "seed": config.seed}
    save_checkpoint(path, header, arrays)
    return path


def load_trained(path: str | Path) -> tuple[Encoder, Generator, RunConfig, dict]:
    """Rebuild models from a checkpoint, in eval mode."""
    header, arrays = load_checkpoint(path)
    config = run_config_from_dict(header["config"])
    encoder, generator = build_models(config)
    load_module_arrays(encoder, arrays, "encoder")
    load_module_arrays(generator, arrays, "generator")
    encoder.eval()
    generator.eval()
    return encoder, generator, config, header


def pretrain(
    config: RunConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    log=None,
) -> TrainResult:
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = config.resolve_train_data(out_dir)
    if not train_path.exists():
        raise ConfigError(f"training dataset not found: {train_path}")
    sequences, _ = load_dataset(train_path)
    if len(sequences) < 2:
        raise ConfigError("training needs at least 2 sequences")

    encoder, generator = build_models(config)
    named = named_parameters(encoder, generator)
    optimizer = torch.optim.Adam(
        [p for _, p in named],
        lr=config.optim.lr,
        betas=(config.optim.beta1, config.optim.beta2),
        weight_decay=config.optim.weight_decay,
    )

    start_step = 0
    if resume is not None:
        header, arrays = load_checkpoint(resume)
        load_module_arrays(encoder, arrays, "encoder")
        load_module_arrays(generator, arrays, "generator")
        load_optimizer_arrays(optimizer, named, arrays)
        start_step = int(header["step"])
        if start_step >= config.optim.steps:
            raise ConfigError(
                f"checkpoint already at step {start_step} >= {config.optim.steps}"
            )

    if log:
        log(f"parameters: {parameter_count(encoder) + parameter_count(generator)}")

    schedule = config.schedule.build()
    batch_size = min(config.optim.batch_size, len(sequences))
    metrics_path = out_dir / "metrics.csv"
    fresh = start_step == 0 or not metrics_path.exists()
    last_checkpoint: Path | None = None
    final_losses: dict[str, float] = {}

    with open(metrics_path, "w" if fresh else "a", newline="") as metrics_file:
        writer = csv.writer(metrics_file)
        if fresh:
            writer.writerow(METRICS_COLUMNS)
        for step in range(start_step + 1, config.optim.steps + 1):
            t_begin = time.perf_counter()
            rng = step_rng(config.seed, step)
            idx = rng.choice(len(sequences), size=batch_size, replace=False)
            batch = [sequences[i] for i in idx]
            losses = compute_losses(
                batch, encoder, generator, schedule, rng,
                adapter_cfg=config.adapter, weights=config.weights, aug_spec=config.aug,
            )
            total = losses["total"]
            if not torch.isfinite(total):
                raise TrainingAborted(
                    f"non-finite loss at step {step}; last good checkpoint: {last_checkpoint}",
                    last_checkpoint,
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            final_losses = {k: float(v.item()) for k, v in losses.items()}
            writer.writerow([
                step,
                repr(final_losses["gen"]), repr(final_losses["feat"]),
                repr(final_losses["dist"]), repr(final_losses["total"]),
                f"{time.perf_counter() - t_begin:.6f}", config.seed,
            ])

            if step % config.checkpoint_every == 0 or step == config.optim.steps:
                path = out_dir / f"step_{step:06d}.igmc"
                last_checkpoint = _save(path, config, step, encoder, generator, optimizer, named)
                if log:
                    log(f"step {step}: total {final_losses['total']:.4f} -> {path}")

    assert last_checkpoint is not None
    return TrainResult(
        checkpoint=last_checkpoint,
        metrics=metrics_path,
        steps=config.optim.steps,
        final_losses=final_losses,
    )


def metrics_rows(path: str | Path, drop_wall_time: bool = True) -> list[tuple]:
    """Metrics rows for determinism comparisons (wall time excluded)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        keep = [i for i, name in enumerate(header) if not (drop_wall_time and name == "wall_time")]
        return [tuple(row[i] for i in keep) for row in reader]


def run_hash(checkpoint: str | Path) -> str:
    return checkpoint_hash(checkpoint)
