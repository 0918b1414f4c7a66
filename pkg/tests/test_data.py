import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igm.data import (
    AugmentationSpec,
    CorruptionSpec,
    NUM_JOINTS,
    PART_JOINTS,
    SkeletonSequence,
    augment,
    corrupt,
    generate_synthetic_dataset,
    rotate_z,
    stack_batch,
    temporal_downsample,
)
from igm.errors import ConfigError


def test_generation_counts_and_labels():
    seqs = generate_synthetic_dataset(6, 50, frames=24, seed=7)
    assert len(seqs) == 300
    labels = np.array([s.label for s in seqs])
    for c in range(6):
        assert (labels == c).sum() == 50
    for s in seqs[:10]:
        s.validate()
        assert s.data.shape == (24, 15, 3)


def test_generation_deterministic():
    a = generate_synthetic_dataset(6, 5, seed=7)
    b = generate_synthetic_dataset(6, 5, seed=7)
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)
        assert np.array_equal(x.mask, y.mask)
        assert x.label == y.label


def test_generation_seed_sensitivity():
    a = generate_synthetic_dataset(6, 5, seed=7)
    b = generate_synthetic_dataset(6, 5, seed=8)
    assert any(not np.array_equal(x.data, y.data) for x, y in zip(a, b))


def test_generation_root_centered():
    seqs = generate_synthetic_dataset(3, 2, seed=1)
    for s in seqs:
        assert np.allclose(s.data[:, 0, :], 0.0, atol=1e-7)


def test_generation_invalid_dims():
    with pytest.raises(ConfigError):
        generate_synthetic_dataset(1, 5, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_dataset(6, 0, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_dataset(6, 5, joints=14, seed=0)


def test_augment_all_disabled_is_identity(tiny_dataset, rng):
    seq = tiny_dataset[0]
    out = augment(seq, AugmentationSpec.disabled(), rng)
    assert np.array_equal(out.data, seq.data)
    assert np.array_equal(out.mask, seq.mask)


def test_rotation_inverse_recovers_input(tiny_dataset):
    seq = tiny_dataset[3]
    theta = 0.73
    back = rotate_z(rotate_z(seq, theta), -theta)
    assert np.abs(back.data - seq.data).max() < 1e-9


def test_mask_everything(tiny_dataset, rng):
    spec = AugmentationSpec.disabled()
    spec = AugmentationSpec(
        mask_joint_prob=1.0,
        enable_rotate=False, enable_shear=False, enable_crop=False,
        enable_mask=True, enable_flip=False,
    )
    out = augment(tiny_dataset[0], spec, rng)
    assert not out.mask.any()
    assert np.all(out.data == 0.0)


def test_augment_pure_function_of_rng(tiny_dataset):
    spec = AugmentationSpec()
    a = augment(tiny_dataset[1], spec, np.random.default_rng(42))
    b = augment(tiny_dataset[1], spec, np.random.default_rng(42))
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(a.mask, b.mask)


@settings(max_examples=30, deadline=None)
@given(
    rotate=st.floats(0, np.pi), shear=st.floats(0, 0.5),
    crop_lo=st.floats(0.1, 1.0), mask_p=st.floats(0, 1), flip_p=st.floats(0, 1),
    seed=st.integers(0, 2**32 - 1),
)
def test_augment_never_produces_nan(rotate, shear, crop_lo, mask_p, flip_p, seed):
    seq = generate_synthetic_dataset(2, 1, seed=3)[0]
    spec = AugmentationSpec(
        rotate_max_rad=rotate, shear_max=shear, crop_ratio_range=(crop_lo, 1.0),
        mask_joint_prob=mask_p, flip_prob=flip_p,
    )
    out = augment(seq, spec, np.random.default_rng(seed))
    out.validate()


@settings(max_examples=20, deadline=None)
@given(p=st.floats(0, 1), sigma2=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_corrupt_noise_never_produces_nan(p, sigma2, seed):
    seq = generate_synthetic_dataset(2, 1, seed=3)[0]
    out = corrupt(seq, CorruptionSpec(kind="joint_noise", p=p, sigma2=sigma2),
                  np.random.default_rng(seed))
    out.validate()


def test_corrupt_zero_probability_is_identity(tiny_dataset, rng):
    spec = CorruptionSpec(kind="joint_noise", p=0.0, sigma2=0.1)
    out = corrupt(tiny_dataset[0], spec, rng)
    assert np.array_equal(out.data, tiny_dataset[0].data)


def test_corrupt_part_occlusion(tiny_dataset, rng):
    spec = CorruptionSpec(kind="part_occlusion", part="right_arm")
    out = corrupt(tiny_dataset[0], spec, rng)
    part = PART_JOINTS["right_arm"]
    assert np.all(out.data[:, part] == 0.0)
    assert not out.mask[:, part].any()
    others = [v for v in range(NUM_JOINTS) if v not in part]
    assert np.array_equal(out.data[:, others], tiny_dataset[0].data[:, others])


def test_corrupt_unknown_part_name(tiny_dataset, rng):
    with pytest.raises(ConfigError, match="unknown part"):
        corrupt(tiny_dataset[0], CorruptionSpec(kind="part_occlusion", part="left_tail"), rng)


def test_corrupt_noise_variance_monte_carlo():
    # Empirical variance of (out - in) should match sigma2 within 10%.
    seqs = generate_synthetic_dataset(2, 8, frames=24, seed=5)
    spec = CorruptionSpec(kind="joint_noise", p=1.0, sigma2=0.05)
    rng = np.random.default_rng(123)
    deltas = []
    for s in seqs:
        out = corrupt(s, spec, rng)
        deltas.append((out.data - s.data).ravel())
    deltas = np.concatenate(deltas)
    assert deltas.size >= 10_000
    assert abs(deltas.var() - 0.05) < 0.005


def test_downsample_identity(tiny_dataset):
    seq = tiny_dataset[0]
    out = temporal_downsample(seq, seq.frames)
    assert np.array_equal(out.data, seq.data)


def test_downsample_every_fifth():
    seq = generate_synthetic_dataset(2, 1, frames=120, seed=1)[0]
    out = temporal_downsample(seq, 24)
    assert np.array_equal(out.data, seq.data[::5])
    assert np.array_equal(out.mask, seq.mask[::5])


def test_downsample_composition_matches_single_step():
    seq = generate_synthetic_dataset(2, 1, frames=120, seed=1)[0]
    twice = temporal_downsample(temporal_downsample(seq, 60), 30)
    once = temporal_downsample(seq, 30)
    assert np.array_equal(twice.data, once.data)


def test_downsample_too_long_errors(tiny_dataset):
    with pytest.raises(ConfigError):
        temporal_downsample(tiny_dataset[0], tiny_dataset[0].frames + 1)


def test_nearest_centroid_sanity_above_chance():
    # Raw flattened coordinates must separate the classes well above 1/6.
    train = generate_synthetic_dataset(6, 50, seed=7)
    val = generate_synthetic_dataset(6, 20, seed=8)
    x_train, _, y_train = stack_batch(train)
    x_val, _, y_val = stack_batch(val)
    x_train = x_train.reshape(len(train), -1)
    x_val = x_val.reshape(len(val), -1)
    centroids = np.stack([x_train[y_train == c].mean(axis=0) for c in range(6)])
    pred = np.argmin(
        ((x_val[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1
    )
    accuracy = (pred == y_val).mean()
    assert accuracy > 0.5  # threshold fixed from the oracle at data-design time


def test_masked_invariant_enforced():
    seq = generate_synthetic_dataset(2, 1, seed=0)[0]
    seq.data[0, 0] = 1.0
    seq.mask[0, 0] = False
    with pytest.raises(ConfigError):
        seq.validate()
