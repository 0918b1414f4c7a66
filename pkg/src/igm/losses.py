"""Training objectives: diffusion noise prediction plus the feature- and
distribution-level idempotency constraints, combined by fixed weights.

One optimization step draws, per sample, a diffusion step t with data
noise, and an independent step t' with feature noise. The condition
branch sees the augmented clip; the idempotency target branch sees the
clean clip. No branch is detached: both re-encodings receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .adapter import AdapterConfig, pooled_condition
from .data import AugmentationSpec, SkeletonSequence, augment, stack_batch
from .diffusion import Generator, NoiseSchedule, estimate_x0, q_sample
from .errors import ConfigError
from .network import Encoder


@dataclass(frozen=True)
class LossWeights:
    w_gen: float = 1.0
    w_feat: float = 0.1
    w_dist: float = 0.1
    tau: float = 0.1

    def validate(self) -> None:
        if min(self.w_gen, self.w_feat, self.w_dist) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")


@dataclass
class StepNoise:
    """All randomness of one optimization step, drawn up front."""

    t: np.ndarray         # (B,) diffusion steps for the data branch
    eps: np.ndarray       # (B, T, V, C) data noise
    t_prime: np.ndarray   # (B,) independent steps for the feature noise
    eps_feat: np.ndarray  # (B, d) feature noise


def draw_step_noise(
    rng: np.random.Generator,
    batch: int,
    data_shape: tuple[int, int, int],
    dim: int,
    steps: int,
) -> StepNoise:
    return StepNoise(
        t=rng.integers(1, steps + 1, size=batch),
        eps=rng.standard_normal((batch,) + data_shape),
        t_prime=rng.integers(1, steps + 1, size=batch),
        eps_feat=rng.standard_normal((batch, dim)),
    )


def idempotent_loss(z_a: torch.Tensor, z_b: torch.Tensor) -> torch.Tensor:
    """Squared distance of two unit features: 2 - 2 z_a . z_b."""
    return ((z_a - z_b) ** 2).sum(dim=-1)


def similarity_profile(z: torch.Tensor, z_ref: torch.Tensor) -> torch.Tensor:
    """Inner products of a feature against reference columns (d x m)."""
    if z.shape[-1] != z_ref.shape[0]:
        raise ConfigError(f"feature dim {z.shape[-1]} != reference dim {z_ref.shape[0]}")
    return z @ z_ref


def distribution_idempotency_loss(
    feats_orig: torch.Tensor, feats_gen: torch.Tensor, tau: float
) -> torch.Tensor:
    """KL between softmaxed similarity rows of original and generated features.

    Both profiles use the original batch as the reference set;
    self-similarity entries are excluded.
    """
    b = feats_orig.shape[0]
    if b < 2:
        raise ConfigError("distribution loss needs a batch of at least 2")
    off_diag = ~torch.eye(b, dtype=torch.bool, device=feats_orig.device)
    p_logits = (feats_orig @ feats_orig.T / tau)[off_diag].view(b, b - 1)
    q_logits = (feats_gen @ feats_orig.T / tau)[off_diag].view(b, b - 1)
    log_p = torch.log_softmax(p_logits, dim=-1)
    log_q = torch.log_softmax(q_logits, dim=-1)
    return (log_p.exp() * (log_p - log_q)).sum(dim=-1).mean()


def compute_losses(
    batch: list[SkeletonSequence],
    encoder: Encoder,
    generator: Generator,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    *,
    adapter_cfg: AdapterConfig,
    weights: LossWeights,
    aug_spec: AugmentationSpec | None = None,
    noise: StepNoise | None = None,
    force_idempotency: bool = False,
) -> dict[str, torch.Tensor]:
    """All loss terms of one step, sharing a single set of forward passes.

    The rng is consumed in a fixed order (augmentations, then noise
    draws) regardless of which terms are active, so runs with different
    weight settings see identical batch randomness.
    """
    weights.validate()
    dtype = next(encoder.parameters()).dtype
    data, _, _ = stack_batch(batch)
    x = torch.as_tensor(data, dtype=dtype)

    # condition branch: augmented when a spec is given, clean otherwise
    if aug_spec is not None:
        aug_data = np.stack([augment(seq, aug_spec, rng).data for seq in batch])
        x_cond = torch.as_tensor(aug_data, dtype=dtype)
    else:
        x_cond = x

    if noise is None:
        noise = draw_step_noise(
            rng, len(batch), tuple(x.shape[1:]), encoder.config.dim, schedule.steps
        )

    cond_feat = encoder(x_cond)
    cond = pooled_condition(cond_feat.tokens, adapter_cfg)

    eps = torch.as_tensor(noise.eps, dtype=dtype)
    x_t = q_sample(x, noise.t, eps, schedule)
    eps_hat = generator(x_t, cond, noise.t)
    loss_gen = ((eps_hat - eps) ** 2).sum(dim=(1, 2, 3)).mean()

    out: dict[str, torch.Tensor] = {"gen": loss_gen}
    need_idempotency = force_idempotency or weights.w_feat > 0 or weights.w_dist > 0
    if need_idempotency:
        x0 = estimate_x0(x_t, eps_hat, noise.t, schedule)
        eps_feat = torch.as_tensor(noise.eps_feat, dtype=dtype)
        z_noised = q_sample(cond_feat.pooled, noise.t_prime, eps_feat, schedule)
        feats_orig = encoder(x).pooled
        feats_gen = encoder(x0, aux=(z_noised, noise.t, noise.t_prime)).pooled
        out["feat"] = -(feats_orig * feats_gen).sum(dim=-1).mean()
        out["dist"] = distribution_idempotency_loss(feats_orig, feats_gen, weights.tau)
    else:
        zero = loss_gen.new_zeros(())
        out["feat"] = zero
        out["dist"] = zero

    out["total"] = (
        weights.w_gen * out["gen"]
        + weights.w_feat * out["feat"]
        + weights.w_dist * out["dist"]
    )
    return out


def noise_prediction_loss(
    batch, encoder, generator, schedule, rng, *, adapter_cfg, aug_spec=None, noise=None
) -> torch.Tensor:
    losses = compute_losses(
        batch, encoder, generator, schedule, rng,
        adapter_cfg=adapter_cfg, weights=LossWeights(1.0, 0.0, 0.0),
        aug_spec=aug_spec, noise=noise,
    )
    return losses["gen"]


def feature_idempotency_loss(
    batch, encoder, generator, schedule, rng, *, adapter_cfg, aug_spec=None, noise=None
) -> torch.Tensor:
    losses = compute_losses(
        batch, encoder, generator, schedule, rng,
        adapter_cfg=adapter_cfg, weights=LossWeights(0.0, 1.0, 0.0),
        aug_spec=aug_spec, noise=noise, force_idempotency=True,
    )
    return losses["feat"]


def total_loss(
    batch, encoder, generator, schedule, rng, *, adapter_cfg, weights, aug_spec=None, noise=None
) -> dict[str, torch.Tensor]:
    return compute_losses(
        batch, encoder, generator, schedule, rng,
        adapter_cfg=adapter_cfg, weights=weights, aug_spec=aug_spec, noise=noise,
    )
