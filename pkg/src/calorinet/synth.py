"""Deterministic synthetic recordings with known energy-expenditure structure.

Each subject gets a profile (resting rate, per-activity increments, a
first-order metabolic lag, silhouette motion and accelerometer signature per
activity).  Silhouettes are filled ellipses whose size encodes posture and
whose oscillation encodes motion; accelerometers carry gravity plus
band-limited vibration; calories are the resting rate plus the activity
increment passed through the lag.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (ACTIVITIES, FRAME_RATE, UNLABELED, ActivityLabel, Dataset, Session,
                   SubjectRecord)

G = 9.81

# kcal/min above resting for an average subject
BASE_INCREMENT = {
    "stand": 0.3, "sit": 0.1, "walk": 2.6, "wipe": 1.2, "vacuum": 2.2, "sweep": 2.0,
    "lie": 0.0, "exercise": 4.0, "stretch": 1.5, "clean": 1.8, "read": 0.15,
}

# (half-height, half-width) as fractions of the image, vertical centre offset
POSTURE = {
    "stand": (0.38, 0.10, 0.0), "walk": (0.38, 0.11, 0.0), "wipe": (0.34, 0.14, 0.04),
    "vacuum": (0.33, 0.14, 0.05), "sweep": (0.33, 0.14, 0.05), "exercise": (0.40, 0.16, -0.02),
    "stretch": (0.42, 0.15, -0.03), "clean": (0.28, 0.15, 0.10), "sit": (0.26, 0.13, 0.12),
    "read": (0.26, 0.12, 0.12), "lie": (0.10, 0.36, 0.25),
}

# silhouette oscillation: amplitude (fraction of width), frequency (Hz)
MOTION = {
    "stand": (0.0, 0.0), "sit": (0.0, 0.0), "read": (0.004, 0.2), "lie": (0.0, 0.0),
    "walk": (0.22, 0.12), "wipe": (0.05, 0.8), "vacuum": (0.12, 0.4), "sweep": (0.10, 0.6),
    "exercise": (0.08, 1.2), "stretch": (0.04, 0.4), "clean": (0.04, 1.0),
}

# accelerometer vibration: (waist amplitude, wrist amplitude) m/s^2, centre frequency Hz
VIBRATION = {
    "stand": (0.03, 0.05, 1.0), "sit": (0.02, 0.04, 1.0), "read": (0.02, 0.08, 1.0),
    "lie": (0.01, 0.02, 1.0), "walk": (1.6, 1.2, 1.9), "wipe": (0.3, 2.0, 1.6),
    "vacuum": (0.9, 1.8, 1.2), "sweep": (0.8, 1.9, 1.4), "exercise": (2.6, 2.8, 2.2),
    "stretch": (0.4, 1.4, 0.6), "clean": (0.5, 1.6, 2.5),
}

# gravity direction per accelerometer, by posture
GRAVITY = {
    "lie": ((1.0, 0.0, 0.0), (0.7, 0.0, 0.7)),
    "sit": ((0.0, 0.2, 0.98), (0.3, 0.5, 0.81)),
    "read": ((0.0, 0.2, 0.98), (0.5, 0.6, 0.62)),
}
GRAVITY_UPRIGHT = ((0.0, 0.0, 1.0), (0.0, 0.3, 0.95))

RECORDED_ORDER = ACTIVITIES


@dataclass
class SynthProfile:
    seed: int
    resting: float = 1.3
    increments: dict = field(default_factory=lambda: dict(BASE_INCREMENT))
    lag_s: float = 15.0
    motion_scale: dict = field(default_factory=lambda: {a: 1.0 for a in ACTIVITIES})
    vibration_scale: float = 1.0
    weight_kg: float = 72.0
    height_cm: float = 174.0

    def validate(self) -> "SynthProfile":
        if not self.resting > 0:
            raise ValueError("resting rate must be positive")
        if not self.lag_s > 0:
            raise ValueError("lag time constant must be positive")
        if any(v < 0 for v in self.increments.values()):
            raise ValueError("activity increments must be non-negative")
        if set(self.increments) != set(ACTIVITIES):
            raise ValueError("profile needs an increment for every activity")
        return self


def make_profile(seed: int, spread: float = 0.3, lag_s: float = 15.0) -> SynthProfile:
    """Random subject: resting rate, increments and body size jittered by ``spread``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    factor = rng.uniform(1 - spread, 1 + spread)
    incs = {a: BASE_INCREMENT[a] * factor * rng.uniform(1 - spread / 2, 1 + spread / 2)
            for a in ACTIVITIES}
    return SynthProfile(
        seed=seed,
        resting=float(1.3 * rng.uniform(1 - spread / 2, 1 + spread / 2)),
        increments=incs,
        lag_s=lag_s,
        vibration_scale=float(rng.uniform(1 - spread / 2, 1 + spread / 2)),
        weight_kg=float(np.round(np.clip(rng.normal(72.3, 15.0 * min(1.0, spread * 3)), 45, 120), 1)),
        height_cm=float(np.round(np.clip(rng.normal(173.6, 9.8), 150, 200), 1)),
    )


def make_script(duration_s: float, rng: np.random.Generator, shuffle=False,
                segment_s=(15.0, 35.0), transition_s=2.0):
    """``[(activity_or_unlabeled, seconds), ...]`` covering ``duration_s``.

    Cycles through the eleven activities in their recorded order (or a random
    order with ``shuffle``), separated by short unlabeled transitions.
    """
    script, total = [], 0.0
    while total < duration_s:
        order = list(RECORDED_ORDER)
        if shuffle:
            order = [order[i] for i in rng.permutation(len(order))]
        for a in order:
            if total >= duration_s:
                break
            seg = float(rng.uniform(*segment_s))
            script.append((a, seg))
            total += seg
            if transition_s > 0 and total < duration_s:
                script.append((UNLABELED, transition_s))
                total += transition_s
    return script


def first_order_lag(target: np.ndarray, lag_s: float, rate: float = FRAME_RATE) -> np.ndarray:
    """Exponential approach to ``target``; the gap shrinks by e every ``lag_s``."""
    keep = np.exp(-1.0 / (rate * lag_s))
    out = np.empty_like(target, dtype=np.float64)
    c = target[0]
    for i, x in enumerate(target):
        c = x + (c - x) * keep
        out[i] = c
    return out


def ellipse_mask(h, w, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.ogrid[0:h, 0:w]
    return ((((yy - cy) / max(ry, 0.5)) ** 2 + ((xx - cx) / max(rx, 0.5)) ** 2) <= 1.0).astype(np.uint8)


def _band_noise(rng, n, freq, rate=FRAME_RATE, components=3):
    t = np.arange(n) / rate
    sig = np.zeros(n)
    for _ in range(components):
        f = freq * rng.uniform(0.8, 1.25)
        sig += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return sig / np.sqrt(components / 2.0)


def _frame_activity(script, rate=FRAME_RATE):
    """Per-frame (physical activity, label) arrays from a script."""
    phys, lab = [], []
    prev = None
    for a, seconds in script:
        n = int(round(seconds * rate))
        actual = a if a != UNLABELED else (prev or "stand")
        phys += [actual] * n
        lab += [a] * n
        if a != UNLABELED:
            prev = a
    return np.array(phys, dtype=object), np.array(lab, dtype=object)


def _labels_from(lab: np.ndarray):
    out = []
    start = 0
    for i in range(1, len(lab) + 1):
        if i == len(lab) or lab[i] != lab[start]:
            if lab[start] != UNLABELED and i - 1 > start:
                out.append(ActivityLabel(start, i - 1, str(lab[start])))
            start = i
    return out


def render_session(name, phys, lab, profile: SynthProfile, image_shape, rng,
                   gaps=False) -> Session:
    h, w = image_shape
    n = len(phys)
    t = np.arange(n) / FRAME_RATE

    # silhouettes: posture ellipse oscillating horizontally
    masks = np.empty((n, h, w), dtype=np.uint8)
    phase = rng.uniform(0, 2 * np.pi)
    x0 = w / 2 + rng.uniform(-0.08, 0.08) * w
    for i in range(n):
        a = phys[i]
        ry, rx, dy = POSTURE[a]
        amp, freq = MOTION[a]
        amp *= profile.motion_scale.get(a, 1.0)
        cx = x0 + amp * w * np.sin(2 * np.pi * freq * t[i] + phase)
        masks[i] = ellipse_mask(h, w, (0.5 + dy) * h, cx, ry * h, rx * w)

    # accelerometers: gravity + vibration per activity segment
    accel = np.zeros((n, 6))
    boundaries = np.flatnonzero(np.r_[True, phys[1:] != phys[:-1], True])
    for s, e in zip(boundaries[:-1], boundaries[1:]):
        a = phys[s]
        gw, gr = GRAVITY.get(a, GRAVITY_UPRIGHT)
        amp_w, amp_r, freq = VIBRATION[a]
        for off, gvec, amp in ((0, gw, amp_w), (3, gr, amp_r)):
            g = G * np.asarray(gvec) / np.linalg.norm(gvec)
            for c in range(3):
                noise = _band_noise(rng, e - s, freq) * amp * profile.vibration_scale
                accel[s:e, off + c] = g[c] + noise * (1.0 if c != 2 else 0.6)
    accel += rng.normal(0, 0.02, size=accel.shape)

    target = profile.resting + np.array([profile.increments[a] for a in phys])
    calories = first_order_lag(target, profile.lag_s)

    frames = np.arange(n, dtype=np.int64)
    sil_keep = np.ones(n, dtype=bool)
    if gaps:
        g0 = int(rng.integers(n // 4, n // 2))
        sil_keep[g0:g0 + int(10 * FRAME_RATE)] = False
        c0 = int(rng.integers(n // 2, 3 * n // 4))
        calories[c0:c0 + int(8 * FRAME_RATE)] = np.nan
    return Session.from_arrays(
        name,
        sil_frames=frames[sil_keep], masks=masks[sil_keep],
        accel_frames=frames, accel=np.round(accel, 6),
        cal_frames=frames, calories=np.round(calories, 6),
        labels=_labels_from(lab),
    )


def generate_dataset(n_subjects=6, sessions=2, duration_s=240.0, image_shape=(60, 80),
                     seed=0, profiles=None, script=None, shuffle=False, lag_s=15.0,
                     spread=0.3, gaps=False, min_frames=1000) -> Dataset:
    """Synthetic dataset in the canonical in-memory form.

    ``script`` fixes the activity sequence for every session; otherwise each
    session draws one (see :func:`make_script`).  ``profiles`` overrides the
    per-subject random profiles.
    """
    if n_subjects < 1 or sessions < 1:
        raise ValueError("need at least one subject and one session")
    if duration_s * FRAME_RATE < min_frames:
        raise ValueError(f"duration must cover at least {min_frames} frames")
    if profiles is not None and len(profiles) != n_subjects:
        raise ValueError("one profile per subject required")
    subjects = []
    for si in range(n_subjects):
        prof = (profiles[si] if profiles is not None
                else make_profile(seed * 1000 + si, spread=spread, lag_s=lag_s)).validate()
        sess = []
        for k in range(sessions):
            rng = np.random.default_rng(np.random.SeedSequence([seed, si, k]))
            sc = script if script is not None else make_script(duration_s, rng, shuffle=shuffle)
            phys, lab = _frame_activity(sc)
            n = int(round(duration_s * FRAME_RATE))
            phys, lab = phys[:n], lab[:n]
            if len(phys) < min_frames:
                raise ValueError(f"activity script covers {len(phys)} frames, need {min_frames}")
            sess.append(render_session(f"session{k + 1:02d}", phys, lab, prof, image_shape, rng, gaps))
        subjects.append(SubjectRecord(f"subject{si + 1:02d}", prof.weight_kg, prof.height_cm, tuple(sess)))
    return Dataset(tuple(subjects))


PROFILE_FIELDS = ("seed", "resting", "lag_s", "vibration_scale", "weight_kg", "height_cm")


def read_profiles(path) -> list:
    """Profiles from a CSV file, one row per subject.

    Required columns: ``seed,resting,lag_s,vibration_scale,weight_kg,height_cm``.
    Optional ``inc_<activity>`` and ``motion_<activity>`` columns override the
    default increment (kcal/min) and motion amplitude scale of that activity.
    """
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no profiles")
    missing = [f for f in PROFILE_FIELDS if f not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(missing)}")
    out = []
    for lineno, r in enumerate(rows, start=2):
        try:
            incs = {a: float(r.get(f"inc_{a}") or BASE_INCREMENT[a]) for a in ACTIVITIES}
            motion = {a: float(r.get(f"motion_{a}") or 1.0) for a in ACTIVITIES}
            prof = SynthProfile(int(r["seed"]), float(r["resting"]), incs, float(r["lag_s"]),
                                motion, float(r["vibration_scale"]), float(r["weight_kg"]),
                                float(r["height_cm"]))
            out.append(prof.validate())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


# ------------------------------------------------ split-information dataset

@dataclass(frozen=True)
class SplitInfoDesign:
    """Calories = resting + posture_gain * p + vibration_gain * v.

    ``p`` only changes the silhouette size, ``v`` only the accelerometer
    vibration amplitude.  Every session contains each (p, v) pair once, so
    within any session ``v`` is uniform given ``p`` and vice versa.
    """

    levels: int = 4
    posture_gain: float = 0.6
    vibration_gain: float = 0.6
    resting: float = 1.5
    segment_s: float = 15.0
    lag_s: float = 1.0
    image_shape: tuple = (32, 40)
    vibration_freq: float = 3.0

    def level_std(self) -> float:
        return float(np.std(np.arange(self.levels)))

    def steady_floor(self, hidden: str) -> float:
        """RMSE floor far from segment changes, where the lag has settled."""
        return self._gain(hidden) * self.level_std()

    def _gain(self, hidden):
        if hidden == "vibration":
            return self.vibration_gain
        if hidden == "posture":
            return self.posture_gain
        raise ValueError(f"hidden factor must be 'vibration' or 'posture', got {hidden!r}")


def make_split_information_set(seed=0, n_subjects=6, design: SplitInfoDesign = SplitInfoDesign()) -> Dataset:
    h, w = design.image_shape
    L = design.levels
    seg = int(round(design.segment_s * FRAME_RATE))
    subjects = []
    for si in range(n_subjects):
        rng, combos, order = _split_order(seed, si, L)
        n = seg * len(combos)
        masks = np.empty((n, h, w), dtype=np.uint8)
        accel = np.zeros((n, 6))
        target = np.empty(n)
        labels = []
        t = np.arange(seg) / FRAME_RATE
        for j, ci in enumerate(order):
            p, v = combos[ci]
            s = j * seg
            ry = h * (0.16 + 0.07 * p)
            rx = w * (0.10 + 0.05 * p)
            sway = 0.03 * w * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
            for i in range(seg):
                masks[s + i] = ellipse_mask(h, w, h / 2, w / 2 + sway[i], ry, rx)
            amp = 0.3 + 0.5 * v
            for c, gc in enumerate((0.0, 0.0, G, 0.0, 0.3 * G, 0.95 * G)):
                accel[s:s + seg, c] = gc + amp * _band_noise(rng, seg, design.vibration_freq)
            target[s:s + seg] = design.resting + design.posture_gain * p + design.vibration_gain * v
            labels.append(ActivityLabel(s, s + seg - 1, ACTIVITIES[(p * L + v) % len(ACTIVITIES)]))
        accel += rng.normal(0, 0.02, size=accel.shape)
        calories = first_order_lag(target, design.lag_s)
        frames = np.arange(n, dtype=np.int64)
        sess = Session.from_arrays("session01", frames, masks, frames, np.round(accel, 6),
                                   frames, np.round(calories, 6), labels)
        subjects.append(SubjectRecord(f"subject{si + 1:02d}", 70.0, 175.0, (sess,)))
    return Dataset(tuple(subjects))


def _split_order(seed, si, levels):
    rng = np.random.default_rng(np.random.SeedSequence([seed, si, 7]))
    combos = [(p, v) for p in range(levels) for v in range(levels)]
    return rng, combos, rng.permutation(len(combos))


def split_information_floors(seed=0, n_subjects=6, design: SplitInfoDesign = SplitInfoDesign(),
                             hidden="vibration", stride=30) -> np.ndarray:
    """Per-subject RMSE floor for a model blind to the ``hidden`` factor.

    The bound conditions on the whole sequence of the visible factor, which
    is more than any causal single-modality model sees.  Given that
    sequence each visible level owns a random permutation of the hidden
    levels, so hidden values of two segments are uncorrelated unless they
    share the visible level, where the covariance is -var/(L-1).  The lag
    is linear, so the error at a tick is gain * w.(h - mean) with ``w`` the
    lag response to each segment, and its variance is gain^2 * w'Cw.
    """
    L = design.levels
    gain = design._gain(hidden)
    seg = int(round(design.segment_s * FRAME_RATE))
    n_seg = L * L
    ticks = np.arange(0, seg * n_seg, stride)
    eye = np.repeat(np.eye(n_seg), seg, axis=0)
    W = np.stack([first_order_lag(eye[:, j], design.lag_s) for j in range(n_seg)], axis=1)[ticks]
    var = design.level_std() ** 2
    floors = np.empty(n_subjects)
    for si in range(n_subjects):
        _, combos, order = _split_order(seed, si, L)
        visible = np.array([combos[ci][0] if hidden == "vibration" else combos[ci][1] for ci in order])
        C = np.where(visible[:, None] == visible[None, :], -var / (L - 1), 0.0)
        np.fill_diagonal(C, var)
        mse = gain ** 2 * np.einsum("ti,ij,tj->t", W, C, W)
        floors[si] = np.sqrt(mse.mean())
    return floors


def motion_energy(masks: np.ndarray) -> float:
    """Mean count of pixels that change between consecutive frames."""
    if len(masks) < 2:
        return 0.0
    return float(np.mean(np.sum(masks[1:] != masks[:-1], axis=(1, 2))))


def with_motion_scale(profile: SynthProfile, scale: float) -> SynthProfile:
    return replace(profile, motion_scale={a: scale for a in ACTIVITIES})
