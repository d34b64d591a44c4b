"""Online prediction from interleaved silhouette and accelerometer streams.

Inputs must arrive in timestamp order.  A prediction is due at every
``stride``-th frame counted from the origin; it is emitted as soon as every
input it depends on is known.  The gravity-removed accelerometer value at a
frame needs the following half filter window, so emission lags by that much
for models that use the accelerometer.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .accel import GravityFilterConfig, StreamingGravityRemover
from .core import SilhouetteFrame
from .evaluation import accel_input, stack_input
from .models import ModelVariant
from .silhouette import SilhouetteEngine, StreamError

_UNKNOWN, _WAITING, _MISSING = "unknown", "waiting", "missing"


@dataclass
class _Tick:
    frame: int
    sil: object = _UNKNOWN
    acc: object = _UNKNOWN


class StreamingPredictor:
    """Feed ``push_silhouette`` / ``push_accel``; each returns ``[(frame, kcal_per_min), ...]``.

    ``kcal_per_min`` is NaN for ticks lacking a required modality.  Resident
    input buffers (silhouette ring plus accelerometer window) are tracked in
    ``max_resident`` and never exceed ``max(dt_0, L)`` frames each; the
    gravity filter's own delay line (``filter_resident``) is bounded by its
    tap count.
    """

    def __init__(self, variant: ModelVariant, stride: int = 30, origin: Optional[int] = None,
                 gravity: GravityFilterConfig = GravityFilterConfig(), on_stack=None):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.variant = variant
        self.stride = int(stride)
        self.origin = origin
        self.on_stack = on_stack  # called with each stack taken at a tick
        self.need_sil = variant.needs_silhouette
        self.need_acc = variant.needs_accel
        self.L = variant.accel_len
        self.engine = None
        self._filter = StreamingGravityRemover(gravity) if variant.gravity_removed else None
        self._acc_frames = deque(maxlen=(self._filter.w if self._filter else 1) + 1)
        self._acc_ring = deque(maxlen=max(self.L, 1))
        self._n_acc = 0
        self._pending = deque()
        self._next_tick = None
        self._last = None
        self._last_sil = None
        self._last_acc = None
        self.max_resident = 0
        self.filter_resident = 0

    @property
    def buffer_bound(self) -> int:
        return max(self.variant.scales.deltas[0], self.L)

    # -------------------------------------------------------------- input
    def _advance(self, frame: int, stream_last, kind):
        if stream_last is not None and frame <= stream_last:
            raise StreamError(f"{kind} frame {frame} is not after previous {kind} frame {stream_last}")
        if self._last is not None and frame < self._last:
            raise StreamError(f"{kind} frame {frame} arrives after frame {self._last}")
        if self.origin is None:
            self.origin = frame
        if frame < self.origin:
            raise StreamError(f"frame {frame} precedes stream origin {self.origin}")
        self._last = frame
        self._add_ticks(frame)
        # anything strictly before this frame can no longer receive input
        for tk in self._pending:
            if tk.frame >= frame:
                break
            if tk.sil is _UNKNOWN:
                tk.sil = _MISSING
            if tk.acc is _UNKNOWN:
                tk.acc = _MISSING

    def _add_ticks(self, upto: int):
        if self._next_tick is None:
            self._next_tick = self.origin
        while self._next_tick <= upto:
            self._pending.append(_Tick(self._next_tick,
                                       _UNKNOWN if self.need_sil else None,
                                       _UNKNOWN if self.need_acc else None))
            self._next_tick += self.stride

    def _tick(self, frame):
        for tk in self._pending:
            if tk.frame == frame:
                return tk
        return None

    def push_silhouette(self, frame: SilhouetteFrame) -> list:
        t = int(frame.timestamp)
        self._advance(t, self._last_sil, "silhouette")
        self._last_sil = t
        if self.need_sil:
            mask = np.asarray(frame.mask)
            if self.engine is None:
                self.engine = SilhouetteEngine(self.variant.scales, mask.shape[1], mask.shape[0])
            self.engine.push(frame)
            tk = self._tick(t)
            if tk is not None:
                stack = self.engine.current_stack()
                tk.sil = stack_input(stack.channels)
                if self.on_stack is not None:
                    self.on_stack(stack)
            self._track()
        return self._emit()

    def push_accel(self, frame: int, row) -> list:
        t = int(frame)
        self._advance(t, self._last_acc, "accel")
        self._last_acc = t
        if self.need_acc:
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (6,) or not np.all(np.isfinite(row)):
                raise StreamError(f"accel frame {t}: need 6 finite values")
            self._acc_frames.append((self._n_acc, t))
            self._n_acc += 1
            tk = self._tick(t)
            if tk is not None:
                tk.acc = _WAITING
            if self._filter is None:
                self._accept(self._n_acc - 1, row)
            else:
                for idx, res in self._filter.push(row):
                    self._accept(idx, res)
            self._track()
        return self._emit()

    def finish(self, end: Optional[int] = None) -> list:
        """Flush the filter and resolve remaining ticks (up to ``end`` if given)."""
        if self._filter is not None:
            for idx, res in self._filter.finish():
                self._accept(idx, res)
        if end is not None and self.origin is not None:
            self._add_ticks(int(end))
        for tk in self._pending:
            if tk.sil is _UNKNOWN:
                tk.sil = _MISSING
            if tk.acc is _UNKNOWN or tk.acc is _WAITING:
                tk.acc = _MISSING
        return self._emit()

    # ----------------------------------------------------------- internals
    def _accept(self, idx: int, residual):
        self._acc_ring.append(residual)
        frame = next(f for i, f in self._acc_frames if i == idx)
        tk = self._tick(frame)
        if tk is not None and tk.acc is _WAITING:
            block = np.stack(self._acc_ring)
            if len(block) < self.L:
                block = np.concatenate([np.zeros((self.L - len(block), 6)), block])
            tk.acc = accel_input(block)

    def _track(self):
        sil = self.engine.resident_frames if self.engine is not None else 0
        self.max_resident = max(self.max_resident, sil, len(self._acc_ring))
        if self._filter is not None:
            self.filter_resident = max(self.filter_resident, self._filter.resident)
        if self.max_resident > self.buffer_bound:
            raise RuntimeError("resident buffer exceeded its bound")

    def _resolved(self, tk) -> bool:
        return tk.sil is not _UNKNOWN and tk.acc is not _UNKNOWN and tk.acc is not _WAITING

    def _emit(self) -> list:
        out = []
        while self._pending and self._resolved(self._pending[0]):
            tk = self._pending.popleft()
            if tk.sil is _MISSING or tk.acc is _MISSING:
                out.append((tk.frame, float("nan")))
                continue
            out.append((tk.frame, self.variant.model.predict(tk.sil, tk.acc)))
        return out


def replay_session(predictor: StreamingPredictor, session) -> list:
    """Feed a stored session frame by frame (silhouette before accel at equal frames)."""
    out = []
    sil_iter = iter(session.silhouette_frames())
    acc = list(zip(session.accel_frames.tolist(), session.accel))
    nxt = next(sil_iter, None)
    j = 0
    while nxt is not None or j < len(acc):
        if nxt is not None and (j >= len(acc) or nxt.timestamp <= acc[j][0]):
            out += predictor.push_silhouette(nxt)
            nxt = next(sil_iter, None)
        else:
            out += predictor.push_accel(*acc[j])
            j += 1
    span = session.span
    out += predictor.finish(end=span[1] if span else None)
    return out
