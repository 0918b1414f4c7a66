"""Transformer substrate: token embedding, blocks, the feature encoder,
and a finite-difference gradient checker.

The encoder maps a skeleton clip to a unit-norm pooled feature. In the
idempotency branch it additionally consumes three auxiliary tokens (a
noised feature plus two timestep embeddings) that are excluded from
pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class NetConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ffn_mult: float = 2.0
    token_layout: str = "grid"  # "grid": one token per (frame, joint); "frame": one per frame
    frames: int = 24
    joints: int = 15
    channels: int = 3
    attn_dropout: float = 0.0

    def validate(self) -> None:
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.token_layout not in ("grid", "frame"):
            raise ConfigError(f"unknown token_layout {self.token_layout!r}")
        if not 0.0 <= self.attn_dropout < 1.0:
            raise ConfigError(f"attn_dropout must be in [0, 1), got {self.attn_dropout}")

    @property
    def tokens(self) -> int:
        return self.frames * self.joints if self.token_layout == "grid" else self.frames

    @property
    def token_in_dim(self) -> int:
        return self.channels if self.token_layout == "grid" else self.joints * self.channels


@dataclass
class Feature:
    """Encoder output: per-token features and the unit-norm pooled vector."""

    tokens: torch.Tensor  # (B, l, d), auxiliary tokens excluded
    pooled: torch.Tensor  # (B, d), unit L2 norm


class TimestepEmbedding(nn.Module):
    """Sinusoidal table over integer steps followed by a learned linear map."""

    def __init__(self, dim: int, max_steps: int):
        super().__init__()
        self.proj = nn.Linear(dim, dim)
        steps = torch.arange(max_steps + 1, dtype=torch.float64)[:, None]
        half = dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
        table = torch.cat([torch.sin(steps * freqs), torch.cos(steps * freqs)], dim=1)
        if table.shape[1] < dim:  # odd dim
            table = torch.cat([table, torch.zeros(max_steps + 1, dim - table.shape[1], dtype=torch.float64)], dim=1)
        self.register_buffer("table", table.float(), persistent=False)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.proj.weight.dtype
        return self.proj(self.table.to(dtype)[t])


class MultiheadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = dropout

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        b, l, d = h.shape
        shape = (b, l, self.heads, self.head_dim)
        q = self.q(h).view(shape).transpose(1, 2)
        k = self.k(h).view(shape).transpose(1, 2)
        v = self.v(h).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        if self.dropout > 0.0 and self.training:
            attn = F.dropout(attn, p=self.dropout)
        mixed = (attn @ v).transpose(1, 2).reshape(b, l, d)
        return self.out(mixed)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: float):
        super().__init__()
        hidden = int(round(dim * mult))
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(h)))


class TransformerBlock(nn.Module):
    """Residual MSA then residual FFN, each followed by layer norm."""

    def __init__(self, dim: int, heads: int, ffn_mult: float, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiheadSelfAttention(dim, heads, dropout)
        self.ffn = FeedForward(dim, ffn_mult)
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = self.ln1(h + self.attn(h))
        return self.ln2(h + self.ffn(h))


class TokenEmbed(nn.Module):
    """Linear projection of clip cells plus spatio-temporal position embeddings."""

    def __init__(self, config: NetConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.proj = nn.Linear(config.token_in_dim, config.dim)
        self.pos_t = nn.Parameter(0.02 * torch.randn(config.frames, config.dim))
        if config.token_layout == "grid":
            self.pos_v = nn.Parameter(0.02 * torch.randn(config.joints, config.dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        b = x.shape[0]
        if x.shape[1:] != (cfg.frames, cfg.joints, cfg.channels):
            raise ConfigError(
                f"input shape {tuple(x.shape[1:])} does not match "
                f"({cfg.frames}, {cfg.joints}, {cfg.channels})"
            )
        if cfg.token_layout == "grid":
            tokens = self.proj(x.reshape(b, cfg.frames * cfg.joints, cfg.channels))
            pos = (self.pos_t[:, None, :] + self.pos_v[None, :, :]).reshape(1, -1, cfg.dim)
        else:
            tokens = self.proj(x.reshape(b, cfg.frames, cfg.joints * cfg.channels))
            pos = self.pos_t[None]
        return tokens + pos


def pool_tokens(tokens: torch.Tensor) -> torch.Tensor:
    """Mean over tokens, projected to the unit sphere."""
    pooled = tokens.mean(dim=1)
    return F.normalize(pooled, dim=-1, eps=1e-12)


class Encoder(nn.Module):
    """Feature extractor f: clip -> (token features, pooled unit feature)."""

    NUM_AUX_TOKENS = 3

    def __init__(self, config: NetConfig, max_timestep: int = 50):
        super().__init__()
        self.config = config
        self.embed = TokenEmbed(config)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.dim, config.heads, config.ffn_mult, config.attn_dropout)
            for _ in range(config.layers)
        )
        self.aux_feature_proj = nn.Linear(config.dim, config.dim)
        self.aux_time = TimestepEmbedding(config.dim, max_timestep)
        self.aux_role = nn.Parameter(0.02 * torch.randn(self.NUM_AUX_TOKENS, config.dim))

    def assemble_tokens(
        self,
        x: torch.Tensor,
        aux: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        tokens = self.embed(x)
        if aux is None:
            return tokens
        z_noised, t, t_prime = aux
        if z_noised.shape[-1] != self.config.dim:
            raise ConfigError(
                f"auxiliary feature dim {z_noised.shape[-1]} != {self.config.dim}"
            )
        extra = torch.stack(
            [self.aux_feature_proj(z_noised), self.aux_time(t), self.aux_time(t_prime)],
            dim=1,
        )
        return torch.cat([extra + self.aux_role[None], tokens], dim=1)

    def forward(
        self,
        x: torch.Tensor,
        aux: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None = None,
    ) -> Feature:
        h = self.assemble_tokens(x, aux)
        for block in self.blocks:
            h = block(h)
        if aux is not None:
            h = h[:, self.NUM_AUX_TOKENS:]
        return Feature(tokens=h, pooled=pool_tokens(h))


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def grad_check(
    loss_fn,
    params,
    eps: float = 1e-4,
    num_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Central finite differences against autograd on a coordinate subsample.

    ``loss_fn`` must be a deterministic scalar function of ``params`` (fix
    any noise draws in the closure) in double precision. Returns the max
    relative error over the sampled coordinates.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ConfigError("no trainable parameters to check")
    for p in params:
        if p.dtype != torch.float64:
            raise ConfigError("grad_check requires float64 parameters")

    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ConfigError(f"non-finite loss {loss.item()!r}")
    if loss.grad_fn is None:  # loss does not depend on the parameters
        grads = [torch.zeros_like(p) for p in params]
    else:
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        grads = [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]

    if rng is None:
        rng = np.random.default_rng(0)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    picks = rng.choice(total, size=min(num_coords, total), replace=False)

    max_rel = 0.0
    with torch.no_grad():
        for flat in picks:
            flat = int(flat)
            pi = 0
            while flat >= sizes[pi]:
                flat -= sizes[pi]
                pi += 1
            view = params[pi].view(-1)
            orig = view[flat].item()
            view[flat] = orig + eps
            loss_plus = float(loss_fn())
            view[flat] = orig - eps
            loss_minus = float(loss_fn())
            view[flat] = orig
            fd = (loss_plus - loss_minus) / (2.0 * eps)
            an = float(grads[pi].view(-1)[flat])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
            max_rel = max(max_rel, rel)
    return max_rel
