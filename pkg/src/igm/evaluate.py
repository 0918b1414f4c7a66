"""Downstream measurements on frozen encoder features: linear probe, KNN,
singular-value spectrum, reconstruction error, feature-space Fréchet
distance, and the corruption-robustness protocol."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch

from .adapter import AdapterConfig, high_pass_fuse
from .data import CorruptionSpec, SkeletonSequence, corrupt, stack_batch
from .diffusion import Generator, NoiseSchedule, denoise_tta
from .errors import ConfigError
from .network import Encoder, pool_tokens


def extract_features(
    encoder: Encoder,
    sequences: list[SkeletonSequence],
    batch_size: int = 64,
    adapter_cfg: AdapterConfig | None = None,
) -> np.ndarray:
    """Pooled unit features of each clip; optionally adapter-filtered first."""
    dtype = next(encoder.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            data, _, _ = stack_batch(sequences[start:start + batch_size])
            x = torch.as_tensor(data, dtype=dtype)
            feat = encoder(x)
            if adapter_cfg is None:
                pooled = feat.pooled
            else:
                normalized = torch.nn.functional.normalize(feat.tokens, dim=-1, eps=1e-12)
                filtered = high_pass_fuse(normalized, adapter_cfg.eta, adapter_cfg.temperature)
                pooled = pool_tokens(filtered)
            chunks.append(pooled.double().numpy())
    return np.concatenate(chunks, axis=0)


def features_from_arrays(encoder: Encoder, data: np.ndarray, batch_size: int = 64) -> np.ndarray:
    dtype = next(encoder.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            x = torch.as_tensor(data[start:start + batch_size], dtype=dtype)
            chunks.append(encoder(x).pooled.double().numpy())
    return np.concatenate(chunks, axis=0)


def linear_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    epochs: int = 200,
    lr: float = 0.1,
    num_classes: int | None = None,
) -> float:
    """Softmax regression by full-batch gradient descent with cosine decay.

    Deterministic: zero-initialized weights, fixed epoch count.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(train_labels.max(), val_labels.max())) + 1
    for name, labels in (("train", train_labels), ("val", val_labels)):
        if labels.min() < 0 or labels.max() >= num_classes:
            raise ConfigError(f"{name} labels out of range [0, {num_classes})")

    x = np.asarray(train_features, dtype=np.float64)
    n, d = x.shape
    weight = np.zeros((num_classes, d))
    bias = np.zeros(num_classes)
    onehot = np.eye(num_classes)[train_labels]
    for epoch in range(epochs):
        logits = x @ weight.T + bias
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        grad_logits = (probs - onehot) / n
        step = lr * 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
        weight -= step * grad_logits.T @ x
        bias -= step * grad_logits.sum(axis=0)

    predictions = np.argmax(val_features @ weight.T + bias, axis=1)
    return float((predictions == val_labels).mean())


def knn_eval(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    k: int = 1,
    exclude_self: bool = False,
) -> float:
    """Cosine-similarity k-nearest-neighbor vote; ties go to the nearest.

    With ``exclude_self`` exact index matches are skipped, for honest
    evaluation when both feature sets are the same array.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    train = np.asarray(train_features, dtype=np.float64)
    val = np.asarray(val_features, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    train = train / np.maximum(np.linalg.norm(train, axis=1, keepdims=True), 1e-12)
    val = val / np.maximum(np.linalg.norm(val, axis=1, keepdims=True), 1e-12)
    sims = val @ train.T
    if exclude_self:
        if sims.shape[0] != sims.shape[1]:
            raise ConfigError("exclude_self needs identically indexed feature sets")
        np.fill_diagonal(sims, -np.inf)

    correct = 0
    for i in range(len(val)):
        order = np.argsort(-sims[i])[:k]
        votes = train_labels[order]
        if k == 1:
            predicted = votes[0]
        else:
            classes, counts = np.unique(votes, return_counts=True)
            winners = classes[counts == counts.max()]
            if len(winners) == 1:
                predicted = winners[0]
            else:
                predicted = next(v for v in votes if v in winners)
        correct += int(predicted == val_labels[i])
    return correct / len(val)


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    effective_rank: float


def effective_rank(singular_values: np.ndarray) -> float:
    """Exponential of the entropy of the normalized singular values."""
    sv = np.asarray(singular_values, dtype=np.float64)
    total = sv.sum()
    if total <= 0:
        return 0.0
    p = sv / total
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def spectrum(features: np.ndarray, center: bool = True) -> SpectrumReport:
    """Singular values of the (column-centered) feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"features must be (m, d), got shape {x.shape}")
    if center:
        x = x - x.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(x, compute_uv=False)
    return SpectrumReport(singular_values=sv, effective_rank=effective_rank(sv))


def mpjpe(
    predicted: np.ndarray, reference: np.ndarray, region_mask: np.ndarray | None = None
) -> float:
    """Mean per-joint position error in millimeters over the selected cells."""
    predicted = np.asarray(predicted, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if predicted.shape != reference.shape:
        raise ConfigError(
            f"shape mismatch {predicted.shape} vs {reference.shape}"
        )
    errors = np.linalg.norm(predicted - reference, axis=-1)
    if region_mask is not None:
        region_mask = np.asarray(region_mask, dtype=bool)
        if region_mask.shape != errors.shape:
            raise ConfigError(
                f"region mask shape {region_mask.shape} != {errors.shape}"
            )
        if not region_mask.any():
            raise ConfigError("empty evaluation region")
        errors = errors[region_mask]
    return float(errors.mean() * 1000.0)


def feature_frechet(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConfigError("feature sets must be (m, d) with a common d")
    dim = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    if min(a.shape[0], b.shape[0]) <= dim:
        warnings.warn("fewer samples than dimensions; regularizing covariances")
        cov_a = cov_a + 1e-6 * np.eye(dim)
        cov_b = cov_b + 1e-6 * np.eye(dim)
    sqrt_product, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
    if np.iscomplexobj(sqrt_product):
        sqrt_product = sqrt_product.real
    value = float(
        np.sum((mu_a - mu_b) ** 2)
        + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(sqrt_product)
    )
    if value < -1e-8:
        raise ConfigError(f"covariance square root failed, distance {value:.3g}")
    return max(value, 0.0)


DEFAULT_CORRUPTIONS = (
    CorruptionSpec(kind="joint_noise", p=1.0, sigma2=0.1),
    CorruptionSpec(kind="joint_noise", p=1.0, sigma2=0.05),
    CorruptionSpec(kind="joint_noise", p=0.5, sigma2=0.1),
    CorruptionSpec(kind="part_occlusion", part="right_arm"),
)

DEFAULT_TTA_SWEEP = (5, 10, 15, 25, 35)


def corruption_protocol(
    encoder: Encoder,
    generator: Generator,
    adapter_cfg: AdapterConfig,
    schedule: NoiseSchedule,
    train_sequences: list[SkeletonSequence],
    val_sequences: list[SkeletonSequence],
    corruptions: tuple[CorruptionSpec, ...] = DEFAULT_CORRUPTIONS,
    with_denoise: bool = True,
    seed: int = 0,
    k: int = 1,
    t_start_sweep: tuple[int, ...] = DEFAULT_TTA_SWEEP,
) -> list[dict]:
    """Accuracy table over a corruption grid, optionally denoising first.

    The denoising step count is chosen per corruption by a small sweep
    on the evaluated split, mirroring a test-time-adaptation budget.
    """
    train_feats = extract_features(encoder, train_sequences)
    train_labels = np.array([s.label for s in train_sequences])
    val_labels = np.array([s.label for s in val_sequences])
    dtype = next(encoder.parameters()).dtype

    clean_feats = extract_features(encoder, val_sequences)
    rows = [{
        "corruption": "none", "mode": "direct", "t_start": 0,
        "accuracy": knn_eval(train_feats, train_labels, clean_feats, val_labels, k=k),
    }]

    for spec_index, spec in enumerate(corruptions):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(spec_index,)))
        corrupted = [corrupt(s, spec, rng) for s in val_sequences]
        data, _, _ = stack_batch(corrupted)
        x_corrupted = torch.as_tensor(data, dtype=dtype)

        direct_feats = features_from_arrays(encoder, data)
        direct_acc = knn_eval(train_feats, train_labels, direct_feats, val_labels, k=k)
        rows.append({
            "corruption": spec.describe(), "mode": "direct", "t_start": 0,
            "accuracy": direct_acc,
        })

        if with_denoise:
            best = None
            for t_start in t_start_sweep:
                if t_start > schedule.steps:
                    continue
                chain_rng = np.random.default_rng(
                    np.random.SeedSequence(seed, spawn_key=(spec_index, t_start))
                )
                denoised = denoise_tta(
                    encoder, generator, adapter_cfg, x_corrupted, t_start, schedule, chain_rng
                )
                feats = features_from_arrays(encoder, denoised.numpy())
                acc = knn_eval(train_feats, train_labels, feats, val_labels, k=k)
                if best is None or acc > best[1]:
                    best = (t_start, acc)
            rows.append({
                "corruption": spec.describe(), "mode": "denoise",
                "t_start": best[0], "accuracy": best[1],
            })
    return rows
