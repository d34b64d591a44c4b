"""Training-time augmentation for silhouette stacks and accelerometer windows."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .accel import AccelWindow
from .silhouette import TemporalSilhouetteStack

AXIS_PERMUTATIONS = tuple(itertools.permutations(range(3)))


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotation_deg: float = 5.0
    shift_frac: float = 0.20
    scale_mean: float = 1.0
    scale_std: float = 0.1
    permute_axes: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if min(self.rotation_deg, self.shift_frac, self.scale_std) < 0:
            raise ValueError("augmentation ranges must be non-negative")

    @classmethod
    def disabled(cls, seed=0):
        return cls(flip_prob=0.0, rotation_deg=0.0, shift_frac=0.0,
                   scale_std=0.0, permute_axes=False, seed=seed)


@dataclass(frozen=True)
class SilhouetteTransform:
    flip: bool
    angle_deg: float
    dx: float  # pixels, +right
    dy: float  # pixels, +down


@dataclass(frozen=True)
class AccelTransform:
    scale: float
    waist_perm: tuple
    wrist_perm: tuple


def draw_silhouette_transform(config: AugmentConfig, rng: np.random.Generator,
                              height: int, width: int) -> SilhouetteTransform:
    # always consume the same number of draws so streams stay aligned
    flip = bool(rng.random() < config.flip_prob)
    angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
    dx = rng.uniform(-config.shift_frac, config.shift_frac) * width
    dy = rng.uniform(-config.shift_frac, config.shift_frac) * height
    return SilhouetteTransform(flip, float(angle), float(dx), float(dy))


def apply_silhouette_transform(channels: np.ndarray, tf: SilhouetteTransform) -> np.ndarray:
    """Flip, rotate about the centre, then shift; nearest neighbour, zero fill.

    ``channels`` is ``(height, width, C)``; the same mapping hits every channel.
    """
    h, w = channels.shape[:2]
    src = channels[:, ::-1] if tf.flip else channels
    if tf.angle_deg == 0.0 and tf.dx == 0.0 and tf.dy == 0.0:
        return np.array(src)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: undo the shift, then the rotation
    y = rows - tf.dy - cy
    x = cols - tf.dx - cx
    a = np.deg2rad(tf.angle_deg)
    c, s = np.cos(a), np.sin(a)
    sy = np.floor(c * y - s * x + cy + 0.5).astype(np.int64)
    sx = np.floor(s * y + c * x + cx + 0.5).astype(np.int64)
    inside = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(channels)
    out[inside] = src[sy[inside], sx[inside]]
    return out


def flip_horizontal(stack: TemporalSilhouetteStack) -> TemporalSilhouetteStack:
    return TemporalSilhouetteStack(stack.timestamp, np.array(stack.channels[:, ::-1]))


def augment_silhouette(stack: TemporalSilhouetteStack, config: AugmentConfig,
                       rng: np.random.Generator) -> TemporalSilhouetteStack:
    h, w = stack.channels.shape[:2]
    tf = draw_silhouette_transform(config, rng, h, w)
    return TemporalSilhouetteStack(stack.timestamp, apply_silhouette_transform(stack.channels, tf))


def draw_accel_transform(config: AugmentConfig, rng: np.random.Generator) -> AccelTransform:
    scale = float(rng.normal(config.scale_mean, config.scale_std))
    waist = AXIS_PERMUTATIONS[int(rng.integers(6))]
    wrist = AXIS_PERMUTATIONS[int(rng.integers(6))]
    if not config.permute_axes:
        waist = wrist = AXIS_PERMUTATIONS[0]
    return AccelTransform(scale, waist, wrist)


def apply_accel_transform(data: np.ndarray, tf: AccelTransform) -> np.ndarray:
    order = list(tf.waist_perm) + [3 + i for i in tf.wrist_perm]
    return (data * tf.scale)[:, order]


def augment_accel(window: AccelWindow, config: AugmentConfig,
                  rng: np.random.Generator) -> AccelWindow:
    tf = draw_accel_transform(config, rng)
    return AccelWindow(window.end, apply_accel_transform(window.data, tf))


def sample_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one (epoch, sample, ...) key under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
