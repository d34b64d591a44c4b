"""Domain types and the canonical on-disk dataset layout.

Layout::

    root/subjectNN/sessionMM/
        silhouettes/000000.pbm ...   one P4 bitmap per frame
        accel.csv                    frame,wx,wy,wz,ax,ay,az
        calories.csv                 frame,kcal_per_min   (NA = missing)
        labels.csv                   start,end,activity   (closed intervals)
        meta.csv                     weight_kg,height_cm

All timestamps are frame indices on a 30 Hz clock.  Accelerometer rows are
linearly resampled onto integer frames at load time and calorie rows are
held (zero-order) until the next row.
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

FRAME_RATE = 30.0  # Hz; assumed, never stated for the source recordings

ACTIVITIES = (
    "stand", "sit", "walk", "wipe", "vacuum", "sweep",
    "lie", "exercise", "stretch", "clean", "read",
)
UNLABELED = "unlabeled"

ACCEL_HEADER = ["frame", "wx", "wy", "wz", "ax", "ay", "az"]
CALORIE_HEADER = ["frame", "kcal_per_min"]
LABEL_HEADER = ["start", "end", "activity"]
META_HEADER = ["weight_kg", "height_cm"]
MISSING_TOKEN = "NA"


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, line, message):
        self.path = Path(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ValidationError(DatasetError):
    def __init__(self, subject, session, message):
        self.subject = subject
        self.session = session
        super().__init__(f"{subject}/{session}: {message}")


@dataclass(frozen=True)
class SilhouetteFrame:
    timestamp: int
    mask: np.ndarray  # (height, width) uint8 in {0, 1}

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass(frozen=True)
class AccelSample:
    timestamp: int
    channels: tuple  # waist x,y,z then wrist x,y,z (m/s^2)


@dataclass(frozen=True)
class CalorieSample:
    timestamp: int
    value: float  # kcal/min; NaN means MISSING

    @property
    def missing(self) -> bool:
        return bool(np.isnan(self.value))


@dataclass(frozen=True)
class ActivityLabel:
    start: int
    end: int
    activity: str

    def __contains__(self, frame) -> bool:
        return self.start <= frame <= self.end


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Session:
    """One recording: four aligned streams on the frame clock.

    ``masks`` is ``(n, height, width)`` uint8, ``accel`` is ``(m, 6)`` and
    ``calories`` holds NaN where the calorimeter reading is missing.  Any
    stream may be empty.
    """

    name: str
    sil_frames: np.ndarray
    masks: np.ndarray
    accel_frames: np.ndarray
    accel: np.ndarray
    cal_frames: np.ndarray
    calories: np.ndarray
    labels: tuple = ()

    @classmethod
    def from_arrays(cls, name, sil_frames=None, masks=None, accel_frames=None,
                    accel=None, cal_frames=None, calories=None, labels=()):
        def arr(a, dtype, shape):
            if a is None:
                return _frozen(np.zeros(shape, dtype=dtype))
            return _frozen(np.array(a, dtype=dtype))

        return cls(
            name=name,
            sil_frames=arr(sil_frames, np.int64, (0,)),
            masks=arr(masks, np.uint8, (0, 0, 0)),
            accel_frames=arr(accel_frames, np.int64, (0,)),
            accel=arr(accel, np.float64, (0, 6)),
            cal_frames=arr(cal_frames, np.int64, (0,)),
            calories=arr(calories, np.float64, (0,)),
            labels=tuple(labels),
        )

    @property
    def image_shape(self):
        return tuple(self.masks.shape[1:]) if len(self.masks) else None

    @property
    def span(self):
        """(first, last) frame over all non-empty streams."""
        firsts, lasts = [], []
        for f in (self.sil_frames, self.accel_frames, self.cal_frames):
            if len(f):
                firsts.append(int(f[0]))
                lasts.append(int(f[-1]))
        if not firsts:
            return None
        return min(firsts), max(lasts)

    def silhouette_frames(self) -> Iterator[SilhouetteFrame]:
        for t, m in zip(self.sil_frames, self.masks):
            yield SilhouetteFrame(int(t), m)

    def accel_samples(self) -> Iterator[AccelSample]:
        for t, row in zip(self.accel_frames, self.accel):
            yield AccelSample(int(t), tuple(float(v) for v in row))

    def calorie_samples(self) -> Iterator[CalorieSample]:
        for t, v in zip(self.cal_frames, self.calories):
            yield CalorieSample(int(t), float(v))

    def calorie_at(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.int64)
        out = np.full(frames.shape, np.nan)
        if len(self.cal_frames):
            idx = np.searchsorted(self.cal_frames, frames)
            ok = idx < len(self.cal_frames)
            ok[ok] = self.cal_frames[idx[ok]] == frames[ok]
            out[ok] = self.calories[idx[ok]]
        return out

    def label_at(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.int64)
        out = np.full(frames.shape, UNLABELED, dtype=object)
        for lab in self.labels:
            out[(frames >= lab.start) & (frames <= lab.end)] = lab.activity
        return out


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    subject_id: str
    weight_kg: float
    height_cm: float
    sessions: tuple = ()


@dataclass(frozen=True, eq=False)
class Dataset:
    subjects: tuple = ()

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    def subject(self, subject_id) -> SubjectRecord:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    def select(self, subject_ids) -> "Dataset":
        keep = set(subject_ids)
        return Dataset(tuple(s for s in self.subjects if s.subject_id in keep))


# ---------------------------------------------------------------- bitmaps

_PNM_HEADER = re.compile(rb"\A(P[45])(?:\s+|#[^\n]*\n)*(\d+)(?:\s+|#[^\n]*\n)*(\d+)"
                         rb"(?:(?:\s+|#[^\n]*\n)*(\d+))?\s")


def write_pbm(path, mask: np.ndarray) -> None:
    h, w = mask.shape
    body = np.packbits(mask.astype(bool), axis=1).tobytes()
    Path(path).write_bytes(b"P4\n%d %d\n" % (w, h) + body)


def read_pbm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PNM_HEADER.match(raw)
    if m is None or m.group(1) != b"P4":
        raise ParseError(path, 1, "not a binary P4 bitmap")
    w, h = int(m.group(2)), int(m.group(3))
    if w <= 0 or h <= 0:
        raise ParseError(path, 1, f"bad bitmap size {w}x{h}")
    row_bytes = (w + 7) // 8
    body = raw[m.end():]
    if len(body) < row_bytes * h:
        raise ParseError(path, 1, "truncated bitmap data")
    bits = np.frombuffer(body[: row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(bits, axis=1)[:, :w].copy()


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit P5 graymap; ``image`` holds values in [0, 1]."""
    h, w = image.shape
    data = np.rint(255 * np.clip(image, 0.0, 1.0)).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PNM_HEADER.match(raw)
    if m is None or m.group(1) != b"P5":
        raise ParseError(path, 1, "not a binary P5 graymap")
    w, h = int(m.group(2)), int(m.group(3))
    return np.frombuffer(raw[m.end(): m.end() + w * h], dtype=np.uint8).reshape(h, w)


# -------------------------------------------------------------------- CSV

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _read_csv(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if [c.strip() for c in first] != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, row))
    return rows


def _parse_float(path, lineno, text, allow_missing=False):
    text = text.strip()
    if allow_missing and text == MISSING_TOKEN:
        return np.nan
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {text!r}") from None
    if not np.isfinite(v):
        raise ParseError(path, lineno, f"non-finite value: {text!r}")
    return v


def _parse_int(path, lineno, text):
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(path, lineno, f"not an integer frame index: {text!r}") from None


def _strictly_increasing(a) -> bool:
    return bool(np.all(np.diff(a) > 0))


# ----------------------------------------------------------------- loading

def resample_accel(frames: np.ndarray, values: np.ndarray):
    """Linear interpolation of ``(frames, values)`` onto the integer frame grid."""
    if len(frames) == 0:
        return np.zeros(0, np.int64), np.zeros((0, 6))
    integral = np.all(frames == np.round(frames))
    if integral and (len(frames) == 1 or np.all(np.diff(frames) == 1)):
        return frames.astype(np.int64), values
    grid = np.arange(np.ceil(frames[0]), np.floor(frames[-1]) + 1).astype(np.int64)
    out = np.column_stack([np.interp(grid, frames, values[:, c]) for c in range(values.shape[1])])
    return grid, out


def hold_calories(frames: np.ndarray, values: np.ndarray):
    """Zero-order hold of sparse calorimeter rows onto every frame."""
    if len(frames) == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    grid = np.arange(frames[0], frames[-1] + 1, dtype=np.int64)
    idx = np.searchsorted(frames, grid, side="right") - 1
    return grid, values[idx]


def _load_session(subject_id, path: Path):
    name = path.name
    sil_dir = path / "silhouettes"
    sil_frames, masks = [], []
    if sil_dir.is_dir():
        files = sorted(sil_dir.glob("*.pbm"), key=lambda p: p.stem)
        for f in files:
            try:
                t = int(f.stem)
            except ValueError:
                raise ParseError(f, 1, "silhouette filename is not a frame index") from None
            sil_frames.append(t)
            masks.append(read_pbm(f))
    order = np.argsort(sil_frames, kind="stable")
    sil_frames = np.asarray(sil_frames, dtype=np.int64)[order]
    if masks:
        shapes = {m.shape for m in masks}
        if len(shapes) != 1:
            raise ValidationError(subject_id, name, f"silhouette sizes differ: {sorted(shapes)}")
        masks = np.stack([masks[i] for i in order])
    else:
        masks = np.zeros((0, 0, 0), np.uint8)
    if len(sil_frames) and not _strictly_increasing(sil_frames):
        raise ValidationError(subject_id, name, "duplicate silhouette frame index")

    accel_frames = np.zeros(0)
    accel = np.zeros((0, 6))
    accel_path = path / "accel.csv"
    if accel_path.exists():
        rows = _read_csv(accel_path, ACCEL_HEADER)
        accel_frames = np.array([_parse_float(accel_path, n, r[0]) for n, r in rows])
        accel = np.array([[_parse_float(accel_path, n, v) for v in r[1:]] for n, r in rows]).reshape(-1, 6)
        if not _strictly_increasing(accel_frames):
            raise ValidationError(subject_id, name, "accelerometer timestamps not strictly increasing")
    accel_frames, accel = resample_accel(accel_frames, accel)

    cal_frames = np.zeros(0, np.int64)
    calories = np.zeros(0)
    cal_path = path / "calories.csv"
    if cal_path.exists():
        rows = _read_csv(cal_path, CALORIE_HEADER)
        cal_frames = np.array([_parse_int(cal_path, n, r[0]) for n, r in rows], dtype=np.int64)
        calories = np.array([_parse_float(cal_path, n, r[1], allow_missing=True) for n, r in rows])
        if not _strictly_increasing(cal_frames):
            raise ValidationError(subject_id, name, "calorie timestamps not strictly increasing")
        if np.any(calories[~np.isnan(calories)] < 0):
            raise ValidationError(subject_id, name, "negative calorie value")
    cal_frames, calories = hold_calories(cal_frames, calories)

    labels = []
    lab_path = path / "labels.csv"
    if lab_path.exists():
        for n, r in _read_csv(lab_path, LABEL_HEADER):
            start, end = _parse_int(lab_path, n, r[0]), _parse_int(lab_path, n, r[1])
            activity = r[2].strip()
            if activity not in ACTIVITIES and activity != UNLABELED:
                raise ParseError(lab_path, n, f"unknown activity {activity!r}")
            labels.append(ActivityLabel(start, end, activity))
    labels = [lab for lab in labels if lab.activity != UNLABELED]
    _check_labels(subject_id, name, labels)

    meta_path = path / "meta.csv"
    if not meta_path.exists():
        raise ParseError(meta_path, 0, "missing meta.csv")
    meta_rows = _read_csv(meta_path, META_HEADER)
    if len(meta_rows) != 1:
        raise ParseError(meta_path, 2, "expected exactly one metadata row")
    n, r = meta_rows[0]
    weight, height = _parse_float(meta_path, n, r[0]), _parse_float(meta_path, n, r[1])
    if weight <= 0 or height <= 0:
        raise ValidationError(subject_id, name, "weight and height must be positive")

    session = Session.from_arrays(name, sil_frames, masks, accel_frames, accel,
                                  cal_frames, calories, labels)
    return session, weight, height


def load_session(path):
    """One session directory; returns ``(session, weight_kg, height_cm)``."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"session {path} is not a directory")
    return _load_session(path.parent.name, path)


def _check_labels(subject_id, session, labels):
    prev_end = None
    for lab in sorted(labels, key=lambda l: l.start):
        if lab.start >= lab.end:
            raise ValidationError(subject_id, session, f"label {lab} has start >= end")
        if prev_end is not None and lab.start <= prev_end:
            raise ValidationError(subject_id, session, f"label {lab} overlaps previous label")
        prev_end = lab.end


def load_dataset(root) -> Dataset:
    """Parse and validate every session under ``root``.

    Raises ParseError for malformed files and ValidationError for streams that
    break the type invariants; nothing partially valid is returned.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    subjects = []
    for sdir in sorted(p for p in root.iterdir() if p.is_dir()):
        sessions, metas = [], []
        for sess_dir in sorted(p for p in sdir.iterdir() if p.is_dir()):
            session, weight, height = _load_session(sdir.name, sess_dir)
            sessions.append(session)
            metas.append((weight, height))
        if not sessions:
            log.info("skipping %s: no sessions", sdir)
            continue
        if len(set(metas)) != 1:
            raise ValidationError(sdir.name, "*", "weight/height differ between sessions")
        shapes = {s.image_shape for s in sessions if s.image_shape}
        if len(shapes) > 1:
            raise ValidationError(sdir.name, "*", f"silhouette sizes differ: {sorted(shapes)}")
        weight, height = metas[0]
        subjects.append(SubjectRecord(sdir.name, weight, height, tuple(sessions)))
    return Dataset(tuple(subjects))


def write_dataset(dataset: Dataset, root) -> None:
    root = Path(root)
    for subj in dataset:
        for sess in subj.sessions:
            d = root / subj.subject_id / sess.name
            sil = d / "silhouettes"
            sil.mkdir(parents=True, exist_ok=True)
            for t, m in zip(sess.sil_frames, sess.masks):
                write_pbm(sil / f"{int(t):06d}.pbm", m)
            with (d / "accel.csv").open("w", newline="\n", encoding="utf-8") as fh:
                fh.write(",".join(ACCEL_HEADER) + "\n")
                for t, row in zip(sess.accel_frames, sess.accel):
                    fh.write(f"{int(t)}," + ",".join(_fmt(v) for v in row) + "\n")
            with (d / "calories.csv").open("w", newline="\n", encoding="utf-8") as fh:
                fh.write(",".join(CALORIE_HEADER) + "\n")
                for t, v in zip(sess.cal_frames, sess.calories):
                    fh.write(f"{int(t)},{MISSING_TOKEN if np.isnan(v) else _fmt(v)}\n")
            with (d / "labels.csv").open("w", newline="\n", encoding="utf-8") as fh:
                fh.write(",".join(LABEL_HEADER) + "\n")
                for lab in sess.labels:
                    fh.write(f"{lab.start},{lab.end},{lab.activity}\n")
            with (d / "meta.csv").open("w", newline="\n", encoding="utf-8") as fh:
                fh.write(",".join(META_HEADER) + "\n")
                fh.write(f"{_fmt(subj.weight_kg)},{_fmt(subj.height_cm)}\n")


# -------------------------------------------------------------- validation

def _runs(mask: np.ndarray, frames: np.ndarray):
    """Closed frame intervals where ``mask`` is true."""
    out = []
    if not len(mask):
        return out
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    for a, b in zip(edges[::2], edges[1::2]):
        out.append((int(frames[a]), int(frames[b - 1])))
    return out


@dataclass
class SessionReport:
    subject_id: str
    session: str
    durations: dict  # stream -> (first, last, count)
    calorie_gaps: list
    silhouette_gaps: list
    label_coverage: float


@dataclass
class ValidationReport:
    subjects: dict = field(default_factory=dict)  # subject id -> [SessionReport]

    @property
    def sessions(self):
        return [r for reps in self.subjects.values() for r in reps]


def validate_dataset(dataset: Dataset) -> ValidationReport:
    report = ValidationReport()
    for subj in dataset:
        reps = []
        for sess in subj.sessions:
            durations = {}
            for stream, frames in (("silhouettes", sess.sil_frames),
                                   ("accel", sess.accel_frames),
                                   ("calories", sess.cal_frames)):
                durations[stream] = ((int(frames[0]), int(frames[-1]), len(frames))
                                     if len(frames) else (None, None, 0))
            cal_gaps = _runs(np.isnan(sess.calories), sess.cal_frames)
            sil_gaps = []
            span = sess.span
            if len(sess.sil_frames) and span is not None:
                grid = np.arange(span[0], span[1] + 1)
                present = np.isin(grid, sess.sil_frames)
                sil_gaps = _runs(~present, grid)
            coverage = 0.0
            if span is not None:
                grid = np.arange(span[0], span[1] + 1)
                coverage = float(np.mean(sess.label_at(grid) != UNLABELED))
            reps.append(SessionReport(subj.subject_id, sess.name, durations,
                                      cal_gaps, sil_gaps, coverage))
        report.subjects[subj.subject_id] = reps
    return report
