"""Multi-scale temporal silhouette templates.

Channel k of a stack is the mean of the last ``dt_k`` silhouettes, with
``dt_k = floor(T / 3**k)`` for k = 0..N.  The streaming engine keeps one
ring buffer of ``dt_0`` masks plus an integer running sum per scale, so a
push costs O(pixels * scales) regardless of T and the result is exactly
equal to summing the window from scratch.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SilhouetteFrame, write_pgm

SCALE_DIVISOR = 3


class ConfigError(ValueError):
    pass


class StreamError(ValueError):
    pass


class EngineStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class TemporalScaleConfig:
    T: int = 1000
    N: int = 4

    @property
    def deltas(self) -> list:
        return [max(1, self.T // SCALE_DIVISOR ** k) for k in range(self.N + 1)]

    @property
    def n_channels(self) -> int:
        return self.N + 1

    def validate(self) -> "TemporalScaleConfig":
        if self.T < 1 or self.N < 0:
            raise ConfigError(f"need T >= 1 and N >= 0, got T={self.T}, N={self.N}")
        d = self.deltas
        if any(a <= b for a, b in zip(d, d[1:])):
            raise ConfigError(f"scale windows must strictly decrease, got {d} for T={self.T}, N={self.N}")
        return self


@dataclass(frozen=True)
class TemporalSilhouetteStack:
    timestamp: int
    channels: np.ndarray  # (height, width, N+1), channel 0 = longest window

    @property
    def shape(self):
        return self.channels.shape

    def dump(self, directory) -> list:
        """Write each channel as an 8-bit P5 graymap; returns the paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for k in range(self.channels.shape[-1]):
            p = directory / f"{self.timestamp:06d}_scale{k}.pgm"
            write_pgm(p, self.channels[..., k])
            paths.append(p)
        return paths


class SilhouetteEngine:
    """Single-writer streaming buffer producing temporal silhouette stacks."""

    def __init__(self, config: TemporalScaleConfig, width: int, height: int):
        self.config = config.validate()
        self.width, self.height = int(width), int(height)
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image dimensions must be positive")
        self.deltas = config.deltas
        self._ring = np.zeros((self.deltas[0], self.height, self.width), dtype=np.uint8)
        self._sums = np.zeros((len(self.deltas), self.height, self.width), dtype=np.int64)
        self._pos = 0
        self.pushed = 0
        self.last_timestamp = None

    @property
    def resident_frames(self) -> int:
        """Number of masks currently held in the ring buffer."""
        return min(self.pushed, self.deltas[0])

    def window_counts(self) -> list:
        return [min(self.pushed, d) for d in self.deltas]

    def push(self, frame: SilhouetteFrame) -> None:
        t = int(frame.timestamp)
        if self.last_timestamp is not None and t <= self.last_timestamp:
            raise StreamError(f"frame {t} is not after previous frame {self.last_timestamp}")
        mask = np.asarray(frame.mask)
        if mask.shape != (self.height, self.width):
            raise StreamError(f"frame {t} has shape {mask.shape}, engine expects {(self.height, self.width)}")
        size = self.deltas[0]
        for k, d in enumerate(self.deltas):
            if self.pushed >= d:
                self._sums[k] -= self._ring[(self._pos - d) % size]
        self._ring[self._pos] = mask
        self._sums += mask
        self._pos = (self._pos + 1) % size
        self.pushed += 1
        self.last_timestamp = t

    def current_stack(self) -> TemporalSilhouetteStack:
        if self.pushed == 0:
            raise EngineStateError("no frames pushed yet")
        counts = np.array(self.window_counts(), dtype=np.float64)
        channels = np.moveaxis(self._sums / counts[:, None, None], 0, -1)
        return TemporalSilhouetteStack(self.last_timestamp, channels)


def new_engine(config: TemporalScaleConfig, width: int, height: int) -> SilhouetteEngine:
    return SilhouetteEngine(config, width, height)


def brute_force_stack(frames, config: TemporalScaleConfig, t: int) -> TemporalSilhouetteStack:
    """Reference stack at ``t`` by direct summation over each window."""
    config.validate()
    frames = list(frames)
    index = next((i for i, f in enumerate(frames) if f.timestamp == t), None)
    if index is None:
        raise ValueError(f"frame {t} not in sequence")
    planes = []
    for d in config.deltas:
        window = frames[max(0, index - d + 1): index + 1]
        total = np.zeros(window[0].mask.shape, dtype=np.int64)
        for f in window:
            total += f.mask
        planes.append(total / len(window))
    return TemporalSilhouetteStack(int(t), np.stack(planes, axis=-1))
