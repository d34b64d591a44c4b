import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calorinet.accel import AccelWindow
from calorinet.augment import (AXIS_PERMUTATIONS, AugmentConfig, SilhouetteTransform, AccelTransform,
                               apply_accel_transform, apply_silhouette_transform, augment_accel,
                               draw_accel_transform, draw_silhouette_transform, flip_horizontal,
                               sample_rng)
from calorinet.silhouette import TemporalSilhouetteStack


def test_flip_is_involution():
    x = np.random.default_rng(0).random((6, 7, 3))
    st_ = TemporalSilhouetteStack(0, x)
    np.testing.assert_array_equal(flip_horizontal(flip_horizontal(st_)).channels, x)


def test_identity_transform():
    x = np.random.default_rng(0).random((6, 7, 3))
    np.testing.assert_array_equal(apply_silhouette_transform(x, SilhouetteTransform(False, 0, 0, 0)), x)


def test_integer_shift_moves_pixels():
    x = np.zeros((5, 6, 1))
    x[2, 2, 0] = 1
    out = apply_silhouette_transform(x, SilhouetteTransform(False, 0.0, 1.0, -1.0))
    assert out[1, 3, 0] == 1 and out.sum() == 1


def test_shift_out_of_frame_fills_zero():
    x = np.ones((4, 4, 2))
    out = apply_silhouette_transform(x, SilhouetteTransform(False, 0.0, 10.0, 0.0))
    assert out.sum() == 0


def test_all_channels_share_the_mapping():
    x = np.random.default_rng(1).random((9, 11, 1))
    stacked = np.concatenate([x, x, x], axis=2)
    tf = SilhouetteTransform(True, 4.0, 1.7, -0.6)
    out = apply_silhouette_transform(stacked, tf)
    np.testing.assert_array_equal(out[..., 0], out[..., 2])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_drawn_ranges(seed):
    cfg = AugmentConfig()
    tf = draw_silhouette_transform(cfg, np.random.default_rng(seed), 240, 320)
    assert abs(tf.angle_deg) <= 5 and abs(tf.dx) <= 0.2 * 320 and abs(tf.dy) <= 0.2 * 240
    at = draw_accel_transform(cfg, np.random.default_rng(seed))
    assert at.waist_perm in AXIS_PERMUTATIONS and at.wrist_perm in AXIS_PERMUTATIONS


def test_accel_permutation_stays_within_sensor():
    data = np.arange(12, dtype=float).reshape(2, 6)
    out = apply_accel_transform(data, AccelTransform(2.0, (2, 0, 1), (1, 2, 0)))
    np.testing.assert_array_equal(out[0], 2 * np.array([2, 0, 1, 4, 5, 3]))


def test_accel_augment_preserves_magnitude_per_sensor():
    data = np.random.default_rng(2).normal(size=(20, 6))
    w = augment_accel(AccelWindow(5, data), AugmentConfig(), np.random.default_rng(3))
    ratio = np.linalg.norm(w.data[:, :3], axis=1) / np.linalg.norm(data[:, :3], axis=1)
    np.testing.assert_allclose(ratio, ratio[0])


def test_disabled_config_is_identity():
    cfg = AugmentConfig.disabled()
    x = np.random.default_rng(0).random((6, 7, 3))
    rng = np.random.default_rng(5)
    assert np.array_equal(apply_silhouette_transform(x, draw_silhouette_transform(cfg, rng, 6, 7)), x)
    at = draw_accel_transform(cfg, rng)
    assert at.scale == 1.0 and at.waist_perm == (0, 1, 2)


def test_sample_rng_is_keyed():
    a = sample_rng(1, 2, 3).random(3)
    np.testing.assert_array_equal(a, sample_rng(1, 2, 3).random(3))
    assert not np.array_equal(a, sample_rng(1, 3, 2).random(3))


def test_invalid_config():
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(scale_std=-1)
