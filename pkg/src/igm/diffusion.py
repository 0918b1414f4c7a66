"""DDPM machinery: noise schedule, forward noising, the conditioned
noise-prediction generator, one-step clean-data estimation, ancestral
sampling, and test-time denoising of corrupted inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .adapter import AdaLN, AdapterConfig, pooled_condition
from .errors import ConfigError
from .network import (
    Encoder,
    FeedForward,
    MultiheadSelfAttention,
    NetConfig,
    TimestepEmbedding,
    TokenEmbed,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables indexed by step; index 0 is the identity level."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas) - 1

    def validate(self) -> None:
        if self.betas[0] != 0.0 or self.alpha_bars[0] != 1.0:
            raise ConfigError("schedule index 0 must be the identity level")
        body = self.betas[1:]
        if np.any(body <= 0.0) or np.any(body >= 1.0):
            raise ConfigError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.02
    kind: str = "linear"

    def build(self) -> "NoiseSchedule":
        return make_schedule(self.steps, self.beta_min, self.beta_max, self.kind)


def make_schedule(
    steps: int = 50,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    betas = np.concatenate([[0.0], np.linspace(beta_min, beta_max, steps)])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    schedule = NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)
    schedule.validate()
    return schedule


def _per_sample(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Gather per-step scalars for a batch and shape them for broadcasting."""
    t = np.asarray(t)
    picked = torch.as_tensor(values[t], dtype=like.dtype, device=like.device)
    return picked.view(t.shape + (1,) * (like.ndim - t.ndim))


def q_sample(x: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward noising: sqrt(a_bar_t) x + sqrt(1 - a_bar_t) eps."""
    if eps.shape != x.shape:
        raise ConfigError(f"noise shape {tuple(eps.shape)} != data shape {tuple(x.shape)}")
    ab = _per_sample(schedule.alpha_bars, t, x)
    return torch.sqrt(ab) * x + torch.sqrt(1.0 - ab) * eps


def estimate_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t, schedule: NoiseSchedule) -> torch.Tensor:
    """Single-step inversion of q_sample given a noise estimate."""
    ab = _per_sample(schedule.alpha_bars, t, x_t)
    return (x_t - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)


class GeneratorBlock(nn.Module):
    """Transformer block whose layer norms are condition-adaptive."""

    def __init__(self, dim: int, heads: int, ffn_mult: float, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiheadSelfAttention(dim, heads, dropout)
        self.ffn = FeedForward(dim, ffn_mult)
        self.adaln1 = AdaLN(dim)
        self.adaln2 = AdaLN(dim)

    def forward(self, h: torch.Tensor, cond: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.adaln1(h + self.attn(h), cond, t_emb)
        return self.adaln2(h + self.ffn(h), cond, t_emb)


class Generator(nn.Module):
    """Noise predictor g(x_t, cond, t) with the encoder's token substrate."""

    def __init__(self, config: NetConfig, max_timestep: int = 50):
        super().__init__()
        self.config = config
        self.embed = TokenEmbed(config)
        self.blocks = nn.ModuleList(
            GeneratorBlock(config.dim, config.heads, config.ffn_mult, config.attn_dropout)
            for _ in range(config.layers)
        )
        self.time = TimestepEmbedding(config.dim, max_timestep)
        self.head = nn.Linear(config.dim, config.token_in_dim)

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor, t) -> torch.Tensor:
        cfg = self.config
        if cond.shape != (x_t.shape[0], cfg.dim):
            raise ConfigError(
                f"condition shape {tuple(cond.shape)} != ({x_t.shape[0]}, {cfg.dim})"
            )
        t_idx = torch.as_tensor(np.asarray(t), dtype=torch.long, device=x_t.device)
        t_emb = self.time(t_idx)
        h = self.embed(x_t)
        for block in self.blocks:
            h = block(h, cond, t_emb)
        out = self.head(h)
        return out.reshape(x_t.shape)


def reverse_chain(
    generator: Generator,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    x_t: torch.Tensor,
    t_start: int,
) -> torch.Tensor:
    """Ancestral denoising from step t_start down to clean data."""
    if not 0 <= t_start <= schedule.steps:
        raise ConfigError(f"t_start {t_start} outside [0, {schedule.steps}]")
    x = x_t
    with torch.no_grad():
        for t in range(t_start, 0, -1):
            t_vec = np.full(x.shape[0], t)
            eps_hat = generator(x, cond, t_vec)
            beta = schedule.betas[t]
            alpha = schedule.alphas[t]
            ab = schedule.alpha_bars[t]
            mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
            if t > 1:
                var = (1.0 - schedule.alpha_bars[t - 1]) / (1.0 - ab) * beta
                noise = torch.as_tensor(
                    rng.standard_normal(tuple(x.shape)), dtype=x.dtype, device=x.device
                )
                x = mean + np.sqrt(var) * noise
            else:
                x = mean
    return x


def sample(
    generator: Generator,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Draw clean data from pure noise, conditioning every step."""
    cfg = generator.config
    shape = (cond.shape[0], cfg.frames, cfg.joints, cfg.channels)
    dtype = next(generator.parameters()).dtype
    x_t = torch.as_tensor(rng.standard_normal(shape), dtype=dtype)
    return reverse_chain(generator, cond, schedule, rng, x_t, schedule.steps)


def denoise_tta(
    encoder: Encoder,
    generator: Generator,
    adapter_cfg: AdapterConfig,
    x: torch.Tensor,
    t_start: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Treat corrupted data as a mid-chain state and denoise it.

    The corrupted input itself provides the condition; scaling by
    sqrt(a_bar_{t_start}) aligns its magnitude with the forward-process
    marginal at that step.
    """
    if t_start == 0:
        return x.clone()
    with torch.no_grad():
        feat = encoder(x)
        cond = pooled_condition(feat.tokens, adapter_cfg)
    x_t = float(np.sqrt(schedule.alpha_bars[t_start])) * x
    return reverse_chain(generator, cond, schedule, rng, x_t, t_start)


def masked_reconstruction(
    encoder: Encoder,
    generator: Generator,
    adapter_cfg: AdapterConfig,
    masked: torch.Tensor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    onestep_t: int | None = None,
) -> torch.Tensor:
    """Reconstruct full clips conditioned on features of masked input.

    Default runs the full reverse chain from pure noise. With
    ``onestep_t`` the masked clip is noised to that step and inverted in
    one shot, which keeps the visible cells as anchors.
    """
    with torch.no_grad():
        feat = encoder(masked)
        cond = pooled_condition(feat.tokens, adapter_cfg)
        if onestep_t is None:
            return sample(generator, cond, schedule, rng)
        if not 1 <= onestep_t <= schedule.steps:
            raise ConfigError(f"onestep_t {onestep_t} outside [1, {schedule.steps}]")
        eps = torch.as_tensor(
            rng.standard_normal(tuple(masked.shape)), dtype=masked.dtype
        )
        t_vec = np.full(masked.shape[0], onestep_t)
        x_t = q_sample(masked, t_vec, eps, schedule)
        eps_hat = generator(x_t, cond, t_vec)
        return estimate_x0(x_t, eps_hat, t_vec, schedule)
