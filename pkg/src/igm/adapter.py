"""Condition adapter h: token high-pass filtering and AdaLN injection.

The filter subtracts each token's similarity-weighted neighborhood
average, removing the shared low-frequency content of a sequence while
keeping the discriminative residual. The filtered condition enters the
generator by scaling and shifting normalized hidden states (AdaLN).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .network import pool_tokens


@dataclass(frozen=True)
class AdapterConfig:
    eta: float = 0.5
    temperature: float = 1.0

    def validate(self) -> None:
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


def uniformity_loss(tokens: torch.Tensor) -> torch.Tensor:
    """Log-sum-exp similarity energy of a unit-row token set.

    Equals sum_i log sum_j exp(z_i . z_j); minimizing it spreads tokens
    over the sphere.
    """
    if tokens.ndim != 2:
        raise ConfigError(f"expected (l, d) tokens, got shape {tuple(tokens.shape)}")
    norms = tokens.norm(dim=-1)
    if not torch.allclose(norms, torch.ones_like(norms), atol=1e-5):
        raise ConfigError("uniformity_loss requires L2-normalized rows")
    sims = tokens @ tokens.T
    return torch.logsumexp(sims, dim=-1).sum()


def high_pass_fuse(tokens: torch.Tensor, eta: float, temperature: float = 1.0) -> torch.Tensor:
    """One similarity-filter step: (1+eta) z - eta softmax(z z^T) z.

    Works on (l, d) or batched (B, l, d) row-normalized tokens; eta=0 is
    the identity.
    """
    if eta == 0.0:
        return tokens
    sims = tokens @ tokens.transpose(-2, -1) / temperature
    neighborhood = torch.softmax(sims, dim=-1) @ tokens
    return (1.0 + eta) * tokens - eta * neighborhood


def pooled_condition(tokens: torch.Tensor, config: AdapterConfig) -> torch.Tensor:
    """Filter encoder tokens and pool to one unit condition vector per clip."""
    config.validate()
    normalized = F.normalize(tokens, dim=-1, eps=1e-12)
    filtered = high_pass_fuse(normalized, config.eta, config.temperature)
    return pool_tokens(filtered)


class AdaLN(nn.Module):
    """Layer norm whose scale/shift come from the condition and timestep.

    Output: z_s * (t_s * LN(h) + t_b) + z_b. At init the projections
    produce z_s = t_s = 1 and z_b = t_b = 0, so the module starts as a
    plain parameter-free layer norm.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.cond_scale = nn.Linear(dim, dim)
        self.cond_shift = nn.Linear(dim, dim)
        self.time_scale = nn.Linear(dim, dim)
        self.time_shift = nn.Linear(dim, dim)
        for layer in (self.cond_scale, self.cond_shift, self.time_scale, self.time_shift):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)
        nn.init.ones_(self.cond_scale.bias)
        nn.init.ones_(self.time_scale.bias)

    def forward(self, h: torch.Tensor, cond: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.dim or t_emb.shape[-1] != self.dim:
            raise ConfigError("condition/timestep dims do not match AdaLN width")
        normed = F.layer_norm(h, (self.dim,))
        z_s = self.cond_scale(cond)[:, None, :]
        z_b = self.cond_shift(cond)[:, None, :]
        t_s = self.time_scale(t_emb)[:, None, :]
        t_b = self.time_shift(t_emb)[:, None, :]
        return z_s * (t_s * normed + t_b) + z_b
