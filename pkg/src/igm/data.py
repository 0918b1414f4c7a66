"""Synthetic skeleton sequences: generation, augmentation, corruption.

A sequence is a (T, V, C) array of joint coordinates in meters with a
(T, V) validity mask. The synthetic generator produces labeled motion
families on a fixed 15-joint body; every class shares the same base pose,
so the label is carried by motion, not by the pose mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

GENERATOR_VERSION = "1"

# 15-joint body. Coordinates: x right, y forward, z up, meters.
JOINT_NAMES = (
    "pelvis", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)

PART_JOINTS = {
    "left_arm": (3, 4, 5),
    "right_arm": (6, 7, 8),
    "left_leg": (9, 10, 11),
    "right_leg": (12, 13, 14),
    "torso": (0, 1, 2),
}

# Mirror-image joint pairing used by the horizontal flip.
_FLIP_PAIRS = ((3, 6), (4, 7), (5, 8), (9, 12), (10, 13), (11, 14))

_BASE_POSE = np.array([
    [0.00, 0.0, 0.00],   # pelvis
    [0.00, 0.0, 0.55],   # neck
    [0.00, 0.0, 0.72],   # head
    [-0.22, 0.0, 0.50],  # l_shoulder
    [-0.30, 0.0, 0.24],  # l_elbow
    [-0.34, 0.0, 0.00],  # l_wrist
    [0.22, 0.0, 0.50],   # r_shoulder
    [0.30, 0.0, 0.24],   # r_elbow
    [0.34, 0.0, 0.00],   # r_wrist
    [-0.11, 0.0, -0.05],  # l_hip
    [-0.12, 0.0, -0.50],  # l_knee
    [-0.13, 0.0, -0.95],  # l_ankle
    [0.11, 0.0, -0.05],  # r_hip
    [0.12, 0.0, -0.50],  # r_knee
    [0.13, 0.0, -0.95],  # r_ankle
])

CLASS_NAMES = ("arm_wave", "leg_swing", "bend", "crouch", "turn", "still_tremor")


@dataclass
class SkeletonSequence:
    """One labeled motion clip: (T, V, C) coordinates plus a validity mask."""

    data: np.ndarray
    mask: np.ndarray
    label: int

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise ConfigError(f"data must be (T, V, C), got shape {self.data.shape}")
        if self.mask.shape != self.data.shape[:2]:
            raise ConfigError(
                f"mask shape {self.mask.shape} does not match data {self.data.shape[:2]}"
            )
        if not np.isfinite(self.data).all():
            raise ConfigError("data contains NaN or Inf")
        if self.label < 0:
            raise ConfigError(f"negative label {self.label}")
        if np.any(self.data[~self.mask] != 0.0):
            raise ConfigError("invalid joints must have zeroed coordinates")

    def copy(self) -> "SkeletonSequence":
        return SkeletonSequence(self.data.copy(), self.mask.copy(), self.label)


@dataclass(frozen=True)
class AugmentationSpec:
    """Random-transform configuration for the condition branch."""

    rotate_max_rad: float = 0.3
    shear_max: float = 0.1
    crop_ratio_range: tuple[float, float] = (0.6, 1.0)
    mask_joint_prob: float = 0.1
    flip_prob: float = 0.5
    enable_rotate: bool = True
    enable_shear: bool = True
    enable_crop: bool = True
    enable_mask: bool = True
    enable_flip: bool = True

    def validate(self) -> None:
        lo, hi = self.crop_ratio_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop ratios must satisfy 0 < low <= high <= 1, got {self.crop_ratio_range}")
        for name, p in (("mask_joint_prob", self.mask_joint_prob), ("flip_prob", self.flip_prob)):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.rotate_max_rad < 0 or self.shear_max < 0:
            raise ConfigError("rotate_max_rad and shear_max must be >= 0")

    @staticmethod
    def disabled() -> "AugmentationSpec":
        return AugmentationSpec(
            enable_rotate=False, enable_shear=False, enable_crop=False,
            enable_mask=False, enable_flip=False,
        )


@dataclass(frozen=True)
class CorruptionSpec:
    """Test-time input corruption: per-joint Gaussian noise or part occlusion."""

    kind: str
    p: float = 0.0
    sigma2: float = 0.0
    part: tuple[int, ...] | str = ()

    def validate(self, joints: int) -> None:
        if self.kind not in ("joint_noise", "part_occlusion"):
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if self.kind == "joint_noise":
            if not 0.0 <= self.p <= 1.0:
                raise ConfigError(f"noise probability must be in [0, 1], got {self.p}")
            if self.sigma2 < 0:
                raise ConfigError(f"noise variance must be >= 0, got {self.sigma2}")
        else:
            joints_idx = self.resolve_part()
            if any(v < 0 or v >= joints for v in joints_idx):
                raise ConfigError(f"part joints {joints_idx} out of range [0, {joints})")

    def resolve_part(self) -> tuple[int, ...]:
        if isinstance(self.part, str):
            if self.part not in PART_JOINTS:
                raise ConfigError(
                    f"unknown part name {self.part!r}; known: {sorted(PART_JOINTS)}"
                )
            return PART_JOINTS[self.part]
        return tuple(int(v) for v in self.part)

    def describe(self) -> str:
        if self.kind == "joint_noise":
            return f"joint_noise(p={self.p:g}, sigma2={self.sigma2:g})"
        part = self.part if isinstance(self.part, str) else ",".join(map(str, self.part))
        return f"part_occlusion({part})"


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    num_classes: int
    num_samples: int
    split: str
    seed: int
    generator_version: str = GENERATOR_VERSION


def _rotation_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotate_about_x(points: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate (T, V, 3) points about the x axis by a per-frame angle."""
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    out = points.copy()
    out[..., 1] = c * points[..., 1] - s * points[..., 2]
    out[..., 2] = s * points[..., 1] + c * points[..., 2]
    return out


def _rotate_about_z(points: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    out = points.copy()
    out[..., 0] = c * points[..., 0] - s * points[..., 1]
    out[..., 1] = s * points[..., 0] + c * points[..., 1]
    return out


def _synthesize(class_id: int, frames: int, rng: np.random.Generator) -> np.ndarray:
    """One motion clip of the given family, before root centering."""
    t = np.arange(frames) / frames
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cycles = 2.0 * rng.uniform(0.7, 1.4)
    amp = rng.uniform(0.6, 1.4)
    body_scale = rng.uniform(0.85, 1.15)
    theta = 2.0 * np.pi * cycles * t + phase
    s = amp * np.sin(theta)
    c = amp * np.cos(theta)

    # static per-joint body-shape jitter: constant over time, so it carries
    # no motion information but defeats naive pose matching
    shape_jitter = rng.normal(0.0, 0.03, size=(1, NUM_JOINTS, 3))
    pose = np.tile(_BASE_POSE * body_scale, (frames, 1, 1)) + shape_jitter
    name = CLASS_NAMES[class_id]
    if name == "arm_wave":
        pose[:, 8, 2] += 0.35 * s
        pose[:, 8, 0] += 0.12 * c
        pose[:, 7, 2] += 0.18 * s
        pose[:, 7, 0] += 0.06 * c
    elif name == "leg_swing":
        pose[:, 14, 1] += 0.38 * s
        pose[:, 13, 1] += 0.22 * s
        pose[:, 5, 1] -= 0.08 * s
    elif name == "bend":
        upper = [1, 2, 3, 4, 5, 6, 7, 8]
        pose[:, upper] = _rotate_about_x(pose[:, upper], 0.45 * s)
    elif name == "crouch":
        pose[:, [10, 13], 2] += 0.16 * s[:, None]
        pose[:, [11, 14], 2] += 0.30 * s[:, None]
        pose[:, [9, 12], 2] += 0.05 * s[:, None]
        pose[:, [5, 8], 1] += 0.10 * s[:, None]
    elif name == "turn":
        pose = _rotate_about_z(pose, 0.6 * s)
    elif name == "still_tremor":
        pose += rng.normal(0.0, 0.02, size=pose.shape)

    yaw = rng.uniform(-np.pi / 4, np.pi / 4)
    pose = pose @ _rotation_z(yaw).T
    pose += rng.normal(0.0, 0.02, size=pose.shape)
    return pose


def generate_synthetic_dataset(
    num_classes: int,
    n_per_class: int,
    frames: int = 24,
    joints: int = NUM_JOINTS,
    seed: int = 0,
) -> list[SkeletonSequence]:
    """Labeled synthetic motion clips, a pure function of (arguments, seed).

    Coordinates are root-centered per frame and rounded to float32
    precision so datasets survive the storage format bit-exactly.
    """
    if num_classes < 2 or num_classes > len(CLASS_NAMES):
        raise ConfigError(
            f"num_classes must be in [2, {len(CLASS_NAMES)}], got {num_classes}"
        )
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if joints != NUM_JOINTS:
        raise ConfigError(f"the synthetic body has {NUM_JOINTS} joints, got {joints}")
    if frames < 4:
        raise ConfigError(f"frames must be >= 4, got {frames}")

    streams = np.random.SeedSequence(seed).spawn(num_classes * n_per_class)
    sequences = []
    for class_id in range(num_classes):
        for i in range(n_per_class):
            rng = np.random.default_rng(streams[class_id * n_per_class + i])
            pose = _synthesize(class_id, frames, rng)
            pose -= pose[:, :1, :]  # root-center every frame
            pose = pose.astype(np.float32).astype(np.float64)
            mask = np.ones((frames, NUM_JOINTS), dtype=bool)
            sequences.append(SkeletonSequence(pose, mask, class_id))
    return sequences


def apply_linear(seq: SkeletonSequence, matrix: np.ndarray) -> SkeletonSequence:
    """Apply one 3x3 linear map to every valid joint coordinate."""
    data = seq.data @ np.asarray(matrix, dtype=np.float64).T
    data[~seq.mask] = 0.0
    return SkeletonSequence(data, seq.mask.copy(), seq.label)


def rotate_z(seq: SkeletonSequence, theta: float) -> SkeletonSequence:
    """Rotate all coordinates about the vertical axis by theta radians."""
    return apply_linear(seq, _rotation_z(theta))


def _flip_lr(seq: SkeletonSequence) -> SkeletonSequence:
    data = seq.data.copy()
    mask = seq.mask.copy()
    data[..., 0] *= -1.0
    for a, b in _FLIP_PAIRS:
        data[:, [a, b]] = data[:, [b, a]]
        mask[:, [a, b]] = mask[:, [b, a]]
    return SkeletonSequence(data, mask, seq.label)


def _crop_resample(seq: SkeletonSequence, ratio: float, rng: np.random.Generator) -> SkeletonSequence:
    frames = seq.frames
    length = max(2, int(round(ratio * frames)))
    if length >= frames:
        return seq.copy()
    start = int(rng.integers(0, frames - length + 1))
    window = seq.data[start:start + length]
    window_mask = seq.mask[start:start + length]

    positions = np.linspace(0.0, length - 1.0, frames)
    lo = np.floor(positions).astype(int)
    hi = np.minimum(lo + 1, length - 1)
    frac = (positions - lo)[:, None, None]
    data = (1.0 - frac) * window[lo] + frac * window[hi]
    mask = window_mask[lo] & window_mask[hi]
    data[~mask] = 0.0
    return SkeletonSequence(data, mask, seq.label)


def augment(
    seq: SkeletonSequence, spec: AugmentationSpec, rng: np.random.Generator
) -> SkeletonSequence:
    """Randomized condition-branch transform; identity when all parts are disabled."""
    spec.validate()
    out = seq.copy()

    matrix = np.eye(3)
    if spec.enable_shear:
        shear = np.eye(3)
        off = rng.uniform(-spec.shear_max, spec.shear_max, size=6)
        shear[0, 1], shear[0, 2] = off[0], off[1]
        shear[1, 0], shear[1, 2] = off[2], off[3]
        shear[2, 0], shear[2, 1] = off[4], off[5]
        matrix = shear @ matrix
    if spec.enable_rotate:
        theta = rng.uniform(-spec.rotate_max_rad, spec.rotate_max_rad)
        matrix = _rotation_z(theta) @ matrix
    if spec.enable_shear or spec.enable_rotate:
        out = apply_linear(out, matrix)

    if spec.enable_flip and rng.uniform() < spec.flip_prob:
        out = _flip_lr(out)

    if spec.enable_crop:
        lo, hi = spec.crop_ratio_range
        ratio = rng.uniform(lo, hi)
        out = _crop_resample(out, ratio, rng)

    if spec.enable_mask:
        drop = rng.uniform(size=out.mask.shape) < spec.mask_joint_prob
        out.mask &= ~drop
        out.data[~out.mask] = 0.0

    return out


def corrupt(
    seq: SkeletonSequence, spec: CorruptionSpec, rng: np.random.Generator
) -> SkeletonSequence:
    """Apply one corruption; valid-mask semantics match the augmentations."""
    spec.validate(seq.joints)
    out = seq.copy()
    if spec.kind == "joint_noise":
        if spec.p == 0.0 or spec.sigma2 == 0.0:
            return out
        selected = rng.uniform(size=seq.joints) < spec.p
        noise = rng.normal(0.0, np.sqrt(spec.sigma2), size=out.data.shape)
        noise[:, ~selected] = 0.0
        noise[~out.mask] = 0.0
        out.data += noise
    else:
        part = list(spec.resolve_part())
        out.data[:, part] = 0.0
        out.mask[:, part] = False
    return out


def temporal_downsample(seq: SkeletonSequence, target_frames: int) -> SkeletonSequence:
    """Uniform-stride frame selection; mask follows the same index set."""
    frames = seq.frames
    if target_frames > frames:
        raise ConfigError(f"target frames {target_frames} exceeds sequence length {frames}")
    if target_frames < 1:
        raise ConfigError(f"target frames must be >= 1, got {target_frames}")
    if frames % target_frames == 0:
        idx = np.arange(target_frames) * (frames // target_frames)
    else:
        idx = np.floor(np.arange(target_frames) * frames / target_frames).astype(int)
    return SkeletonSequence(seq.data[idx].copy(), seq.mask[idx].copy(), seq.label)


def stack_batch(sequences: list[SkeletonSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack sequences into (N,T,V,C) data, (N,T,V) mask, (N,) labels."""
    data = np.stack([s.data for s in sequences])
    mask = np.stack([s.mask for s in sequences])
    labels = np.array([s.label for s in sequences], dtype=np.int64)
    return data, mask, labels
