"""Gravity removal and fixed-length accelerometer windows.

The gravity estimate is a per-channel symmetric moving average spanning the
configured window (rounded to an odd tap count so it is centred on the
sample).  Near the ends of a recording the window slides inward rather than
shrinking, so a constant input is reproduced exactly everywhere.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import FRAME_RATE

N_CHANNELS = 6


@dataclass(frozen=True)
class GravityFilterConfig:
    window_seconds: float = 1.0
    sample_rate: float = FRAME_RATE

    def __post_init__(self):
        if self.window_seconds <= 0 or self.sample_rate <= 0:
            raise ValueError("window length and sample rate must be positive")

    @property
    def taps(self) -> int:
        return 2 * int(self.window_seconds * self.sample_rate // 2) + 1


@dataclass(frozen=True)
class AccelWindow:
    end: int
    data: np.ndarray  # (L, 6), oldest row first


def _window_means(x: np.ndarray, w: int) -> np.ndarray:
    # Sequential adds over shifted slices; the streaming filter feeds w-row
    # blocks through this same function so both paths agree bit for bit.
    n = len(x)
    acc = x[0: n - w + 1].copy()
    for i in range(1, w):
        acc = acc + x[i: n - w + 1 + i]
    return acc / w


def gravity_filter_response(freq_hz, config: GravityFilterConfig = GravityFilterConfig()):
    """Magnitude response of the gravity smoother at ``freq_hz``."""
    w = config.taps
    x = np.pi * np.asarray(freq_hz, dtype=float) / config.sample_rate
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.sin(w * x) / (w * np.sin(x))
    return np.abs(np.where(np.isclose(np.sin(x), 0.0), 1.0, h))


def estimate_gravity(samples, config: GravityFilterConfig = GravityFilterConfig()) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a non-empty (n, channels) series")
    n, w = len(x), config.taps
    if n <= w:
        return np.repeat(_window_means(x, n), n, axis=0)
    means = _window_means(x, w)
    starts = np.clip(np.arange(n) - w // 2, 0, n - w)
    return means[starts]


def remove_gravity(samples, config: GravityFilterConfig = GravityFilterConfig()) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return x - estimate_gravity(x, config)


def window_at(frames, values, t: int, length: int) -> AccelWindow:
    """Last ``length`` rows ending at frame ``t``, zero-padded on the left."""
    frames = np.asarray(frames)
    i = int(np.searchsorted(frames, t))
    if i >= len(frames) or frames[i] != t:
        raise ValueError(f"frame {t} not in accelerometer series")
    values = np.asarray(values)
    block = values[max(0, i + 1 - length): i + 1]
    if len(block) < length:
        pad = np.zeros((length - len(block), values.shape[1]), dtype=values.dtype)
        block = np.concatenate([pad, block])
    return AccelWindow(int(t), block)


class StreamingGravityRemover:
    """Online counterpart of :func:`remove_gravity`.

    Residuals are released with a delay of half the filter window (they need
    the samples after them); :meth:`finish` flushes the tail.  Holds at most
    ``taps`` raw rows.
    """

    def __init__(self, config: GravityFilterConfig = GravityFilterConfig()):
        self.w = config.taps
        self.h = self.w // 2
        self._raw = deque(maxlen=self.w)
        self.count = 0

    @property
    def resident(self) -> int:
        return len(self._raw)

    def push(self, row) -> list:
        """Add sample ``count``; returns ``[(index, residual_row), ...]`` now final."""
        row = np.asarray(row, dtype=np.float64)
        self._raw.append(row)
        self.count += 1
        j = self.count - 1
        if self.count < self.w:
            return []
        gravity = _window_means(np.stack(self._raw), self.w)[0]
        if self.count == self.w:
            return [(t, self._raw[t] - gravity) for t in range(self.h + 1)]
        return [(j - self.h, self._raw[self.h] - gravity)]

    def finish(self) -> list:
        n = self.count
        if n == 0:
            return []
        block = np.stack(self._raw)
        if n < self.w:
            gravity = _window_means(block, n)[0]
            return [(t, block[t] - gravity) for t in range(n)]
        gravity = _window_means(block, self.w)[0]
        return [(n - self.w + i, block[i] - gravity) for i in range(self.h + 1, self.w)]
