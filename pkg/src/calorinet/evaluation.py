"""Sample extraction, leave-one-subject-out evaluation and RMSE reporting.

Samples are taken every ``stride`` frames of each session.  A sample holds
the temporal silhouette stack and accelerometer window ending at its frame,
the calorie ground truth there, and its activity label, and is tagged with
its subject and session so fold leakage can be checked.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accel import GravityFilterConfig, remove_gravity, window_at
from .config import ExperimentConfig
from .core import ACTIVITIES, Dataset, Session
from .models import ModelVariant, build_variant, check_inputs, load_mets_table, mets_predict
from .nn.train import ArraySet, train
from .silhouette import SilhouetteEngine, TemporalScaleConfig

log = logging.getLogger(__name__)

INPUT_DTYPE = np.float32
METS = "mets"


class ReportError(ValueError):
    pass


# ---------------------------------------------------------------- samples

@dataclass(frozen=True)
class InputSpec:
    """Which inputs a model consumes and how they are built."""

    need_sil: bool
    need_acc: bool
    scales: TemporalScaleConfig
    accel_len: int
    gravity_removed: bool
    stride: int = 30

    @classmethod
    def for_variant(cls, variant: ModelVariant, stride: int) -> "InputSpec":
        return cls(variant.needs_silhouette, variant.needs_accel, variant.scales,
                   variant.accel_len, variant.gravity_removed, stride)


@dataclass
class SampleSet:
    subject: np.ndarray
    session: np.ndarray
    frame: np.ndarray
    label: np.ndarray
    target: np.ndarray  # NaN where the calorimeter reading is missing
    has_sil: np.ndarray
    has_acc: np.ndarray
    silhouette: Optional[np.ndarray] = None  # (n, H, W, C)
    accel: Optional[np.ndarray] = None  # (n, L, 6)
    warmup: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.frame)

    def take(self, idx) -> "SampleSet":
        kw = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            kw[f.name] = None if v is None else v[idx]
        return SampleSet(**kw)

    @classmethod
    def concat(cls, sets) -> "SampleSet":
        sets = list(sets)
        kw = {}
        for f in dataclasses.fields(cls):
            vals = [getattr(s, f.name) for s in sets]
            kw[f.name] = None if any(v is None for v in vals) else np.concatenate(vals)
        return cls(**kw)

    def arrays(self) -> ArraySet:
        return ArraySet(self.target, self.silhouette, self.accel)

    def complete(self, spec: InputSpec) -> np.ndarray:
        ok = np.ones(len(self), dtype=bool)
        if spec.need_sil:
            ok &= self.has_sil
        if spec.need_acc:
            ok &= self.has_acc
        return ok


def tick_frames(session: Session, stride: int) -> np.ndarray:
    span = session.span
    if span is None:
        return np.zeros(0, dtype=np.int64)
    return np.arange(span[0], span[1] + 1, stride, dtype=np.int64)


def stack_input(channels) -> np.ndarray:
    return np.asarray(channels, dtype=INPUT_DTYPE)


def accel_input(data) -> np.ndarray:
    return np.asarray(data, dtype=INPUT_DTYPE)


def session_accel(session: Session, spec: InputSpec, gravity=GravityFilterConfig()) -> np.ndarray:
    if not len(session.accel):
        return session.accel
    return remove_gravity(session.accel, gravity) if spec.gravity_removed else np.asarray(session.accel)


def extract_session(subject_id: str, session: Session, spec: InputSpec,
                    gravity=GravityFilterConfig()) -> SampleSet:
    ticks = tick_frames(session, spec.stride)
    n = len(ticks)
    has_sil = np.zeros(n, dtype=bool)
    has_acc = np.zeros(n, dtype=bool)
    sil = acc = None
    if spec.need_sil:
        shape = session.image_shape or (1, 1)
        sil = np.zeros((n,) + tuple(shape) + (spec.scales.n_channels,), dtype=INPUT_DTYPE)
        if len(session.sil_frames):
            engine = SilhouetteEngine(spec.scales, shape[1], shape[0])
            tick_pos = {int(t): i for i, t in enumerate(ticks)}
            for frame in session.silhouette_frames():
                engine.push(frame)
                i = tick_pos.get(frame.timestamp)
                if i is not None:
                    sil[i] = stack_input(engine.current_stack().channels)
                    has_sil[i] = True
    if spec.need_acc:
        acc = np.zeros((n, spec.accel_len, 6), dtype=INPUT_DTYPE)
        if len(session.accel_frames):
            series = session_accel(session, spec, gravity)
            present = np.isin(ticks, session.accel_frames)
            for i in np.flatnonzero(present):
                acc[i] = accel_input(window_at(session.accel_frames, series, ticks[i], spec.accel_len).data)
            has_acc = present
    start = ticks[0] if n else 0
    return SampleSet(
        subject=np.full(n, subject_id, dtype=object),
        session=np.full(n, session.name, dtype=object),
        frame=ticks,
        label=session.label_at(ticks),
        target=session.calorie_at(ticks),
        has_sil=has_sil,
        has_acc=has_acc,
        silhouette=sil,
        accel=acc,
        warmup=(ticks - start) < spec.scales.deltas[0] - 1,
    )


def extract_samples(dataset: Dataset, spec: InputSpec) -> SampleSet:
    parts = [extract_session(s.subject_id, sess, spec) for s in dataset for sess in s.sessions]
    if not parts:
        raise ValueError("dataset has no sessions")
    return SampleSet.concat(parts)


# ------------------------------------------------------------------ folds

@dataclass(frozen=True)
class FoldPlan:
    test_subject: str
    train_subjects: tuple
    seed: int


def fold_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def loso_folds(dataset, seed: int = 0) -> list:
    """One fold per subject, ordered by subject id."""
    ids = sorted(dataset.subject_ids if isinstance(dataset, Dataset) else dataset)
    if len(ids) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    return [FoldPlan(t, tuple(i for i in ids if i != t), fold_seed(seed, k))
            for k, t in enumerate(ids)]


def impute_missing(samples: SampleSet, rng: np.random.Generator, spec: InputSpec):
    """Fill each missing modality from a random same-subject, same-label donor.

    Returns ``(samples, dropped)``; samples with no eligible donor are
    removed.
    """
    out = samples.take(slice(None))
    if out.silhouette is not None:
        out.silhouette = out.silhouette.copy()
    if out.accel is not None:
        out.accel = out.accel.copy()
    out.has_sil, out.has_acc = out.has_sil.copy(), out.has_acc.copy()
    keep = np.ones(len(out), dtype=bool)
    mods = [m for m, need in (("sil", spec.need_sil), ("acc", spec.need_acc)) if need]
    for i in range(len(out)):
        for m in mods:
            has = samples.has_sil if m == "sil" else samples.has_acc
            if has[i]:
                continue
            donors = np.flatnonzero(has & (samples.subject == samples.subject[i])
                                    & (samples.label == samples.label[i]))
            if len(donors) == 0:
                keep[i] = False
                continue
            d = donors[rng.integers(len(donors))]
            if m == "sil":
                out.silhouette[i] = samples.silhouette[d]
                out.has_sil[i] = True
            else:
                out.accel[i] = samples.accel[d]
                out.has_acc[i] = True
    dropped = int((~keep).sum())
    if dropped:
        log.info("imputation dropped %d samples without donors", dropped)
    return out.take(keep), dropped


def split_validation(samples: SampleSet, fraction: float):
    """Indices ``(train, val)``: the last ``fraction`` of each session is held out."""
    train_idx, val_idx = [], []
    keys = list(zip(samples.subject, samples.session))
    groups = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    for k in sorted(groups):
        idx = sorted(groups[k], key=lambda i: samples.frame[i])
        n_val = int(np.ceil(fraction * len(idx))) if len(idx) > 1 else 0
        train_idx += idx[: len(idx) - n_val]
        val_idx += idx[len(idx) - n_val:]
    return np.array(train_idx, dtype=np.int64), np.array(val_idx, dtype=np.int64)


# ------------------------------------------------------------------ RMSE

@dataclass
class RmseReport:
    per_activity: dict
    overall: float
    per_subject: dict = field(default_factory=dict)


def _rmse(err):
    return float(np.sqrt(np.mean(err * err)))


def rmse_report(predictions: dict, ground_truth: dict, labels: dict) -> RmseReport:
    """Per-activity and overall RMSE, each averaged across subjects.

    For every subject the RMSE is taken over that subject's frames (of one
    activity, or all of them), then the subject values are averaged.  Frames
    whose prediction or ground truth is NaN are ignored; activities a subject
    never performs are left out of that subject's entry.
    """
    per_subject = {}
    for sid in sorted(ground_truth):
        gt = np.asarray(ground_truth[sid], dtype=float)
        pr = np.asarray(predictions[sid], dtype=float)
        lab = np.asarray(labels[sid], dtype=object)
        ok = ~(np.isnan(gt) | np.isnan(pr))
        if not ok.any():
            continue
        err = pr[ok] - gt[ok]
        entry = {"overall": _rmse(err), "per_activity": {}}
        for a in ACTIVITIES:
            sel = lab[ok] == a
            if sel.any():
                entry["per_activity"][a] = _rmse(err[sel])
        per_subject[sid] = entry
    if not per_subject:
        raise ReportError("no frame has both a prediction and ground truth")
    per_activity = {}
    for a in ACTIVITIES:
        vals = [e["per_activity"][a] for e in per_subject.values() if a in e["per_activity"]]
        if vals:
            per_activity[a] = float(np.mean(vals))
    overall = float(np.mean([e["overall"] for e in per_subject.values()]))
    return RmseReport(per_activity, overall, per_subject)


# ------------------------------------------------------------- LOSO runs

@dataclass
class FoldResult:
    plan: FoldPlan
    test_index: np.ndarray  # positions in the full sample set
    predictions: np.ndarray
    history: list = field(default_factory=list)
    best_epoch: int = 0
    dropped: int = 0


@dataclass
class LosoResult:
    variant: str
    samples: SampleSet  # evaluation frames of every subject (inputs stripped)
    predictions: np.ndarray
    report: RmseReport
    folds: list = field(default_factory=list)

    def by_subject(self):
        preds, gts, labs = {}, {}, {}
        for sid in sorted(set(self.samples.subject)):
            sel = self.samples.subject == sid
            preds[sid] = self.predictions[sel]
            gts[sid] = self.samples.target[sel]
            labs[sid] = self.samples.label[sel]
        return preds, gts, labs


def image_shape_of(dataset: Dataset):
    for s in dataset:
        for sess in s.sessions:
            if sess.image_shape:
                return sess.image_shape
    return None


def make_variant(config: ExperimentConfig, dataset: Dataset, seed: int, name=None) -> ModelVariant:
    name = name or config.variant
    shape = image_shape_of(dataset) or (1, 1)
    variant = build_variant(name, shape, config.scales, config.accel_len, config.hyper, seed=seed)
    has_sil = any(len(sess.sil_frames) for s in dataset for sess in s.sessions)
    has_acc = any(len(sess.accel_frames) for s in dataset for sess in s.sessions)
    check_inputs(variant, has_sil, has_acc)
    return variant


def predict_samples(variant: ModelVariant, samples: SampleSet) -> np.ndarray:
    """One forward pass per sample (the streaming predictor does the same)."""
    spec_sil, spec_acc = variant.needs_silhouette, variant.needs_accel
    out = np.full(len(samples), np.nan)
    for i in range(len(samples)):
        if (spec_sil and not samples.has_sil[i]) or (spec_acc and not samples.has_acc[i]):
            continue
        out[i] = variant.model.predict(samples.silhouette[i] if spec_sil else None,
                                       samples.accel[i] if spec_acc else None)
    return out


def fit_variant(variant: ModelVariant, samples: SampleSet, config: ExperimentConfig,
                seed: int) -> tuple:
    """Impute, split off validation tails, and train.  Returns ``(TrainResult, dropped)``."""
    spec = InputSpec.for_variant(variant, config.sample_stride)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    filled, dropped = impute_missing(samples, rng, spec)
    filled = filled.take(~np.isnan(filled.target))
    if len(filled) == 0:
        raise ValueError("no training samples with ground truth")
    augment = dataclasses.replace(config.augment, seed=seed) if config.augment_enabled else None
    tcfg = dataclasses.replace(config.train, seed=seed, augment=augment)
    if tcfg.model_selection:
        tr, va = split_validation(filled, config.val_fraction)
        train_set, val_set = filled.take(tr).arrays(), filled.take(va).arrays()
    else:
        train_set, val_set = filled.arrays(), None
    result = train(variant.model, train_set, val_set, tcfg)
    return result, dropped


def _run_fold(args):
    plan, dataset_meta, samples, config, variant_name = args
    variant = build_variant(variant_name, dataset_meta["image_shape"], config.scales,
                            config.accel_len, config.hyper, seed=plan.seed)
    train_mask = np.isin(samples.subject, plan.train_subjects)
    test_mask = samples.subject == plan.test_subject
    train_samples = samples.take(train_mask)
    # provenance check: nothing from the held-out subject may reach training
    assert plan.test_subject not in set(train_samples.subject)
    result, dropped = fit_variant(variant, train_samples, config, plan.seed)
    test_index = np.flatnonzero(test_mask)
    preds = predict_samples(variant, samples.take(test_index))
    return FoldResult(plan, test_index, preds, result.history, result.best_epoch, dropped)


def evaluate_loso(dataset: Dataset, config: ExperimentConfig, variant_name=None,
                  jobs: int = 1, samples: Optional[SampleSet] = None) -> LosoResult:
    """Leave-one-subject-out training and evaluation of one variant (or METs)."""
    config.validate()
    name = variant_name or config.variant
    seed = config.resolved_seed()
    stride = config.sample_stride
    if name.lower() == METS:
        return evaluate_mets(dataset, config)
    plans = loso_folds(dataset, seed)
    probe = make_variant(config, dataset, seed, name)
    spec = InputSpec.for_variant(probe, stride)
    if samples is None:
        samples = extract_samples(dataset, spec)
    meta = {"image_shape": image_shape_of(dataset) or (1, 1)}
    tasks = [(p, meta, samples, config, name) for p in plans]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, tasks))
    else:
        folds = [_run_fold(t) for t in tasks]
    predictions = np.full(len(samples), np.nan)
    for f in folds:
        predictions[f.test_index] = f.predictions
    return _finish(name, samples, predictions, config, folds)


def _finish(name, samples, predictions, config, folds=()):
    eval_mask = np.ones(len(samples), dtype=bool)
    if config.exclude_warmup:
        eval_mask &= ~samples.warmup
    bare = dataclasses.replace(samples, silhouette=None, accel=None)
    preds = np.where(eval_mask, predictions, np.nan)
    result = LosoResult(name, bare, preds, None, list(folds))
    result.report = rmse_report(*result.by_subject())
    return result


def evaluate_mets(dataset: Dataset, config: ExperimentConfig, table=None) -> LosoResult:
    table = table or load_mets_table()
    parts, preds = [], []
    spec = InputSpec(False, False, config.scales, 0, False, config.sample_stride)
    for subj in dataset:
        for sess in subj.sessions:
            s = extract_session(subj.subject_id, sess, spec)
            parts.append(s)
            preds.append(mets_predict(sess.labels, subj.weight_kg, table, s.frame))
    samples = SampleSet.concat(parts)
    return _finish(METS, samples, np.concatenate(preds), config)


def evaluate_model(variant: ModelVariant, dataset: Dataset, config: ExperimentConfig) -> LosoResult:
    """Score an already trained variant on every subject of ``dataset``."""
    has_sil = any(len(sess.sil_frames) for s in dataset for sess in s.sessions)
    has_acc = any(len(sess.accel_frames) for s in dataset for sess in s.sessions)
    check_inputs(variant, has_sil, has_acc)
    samples = extract_samples(dataset, InputSpec.for_variant(variant, config.sample_stride))
    return _finish(variant.name, samples, predict_samples(variant, samples), config)


def buffer_sweep(dataset: Dataset, T_values, variant_name: str, config: ExperimentConfig,
                 jobs: int = 1) -> dict:
    """Overall LOSO RMSE for each buffer size ``T``."""
    out = {}
    for T in T_values:
        cfg = dataclasses.replace(config, scales=TemporalScaleConfig(int(T), config.scales.N),
                                  accel_len=None)
        out[int(T)] = evaluate_loso(dataset, cfg, variant_name, jobs=jobs).report.overall
    return out


# ---------------------------------------------------------------- output

def _atomic_write(path, text):
    from pathlib import Path
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _num(v):
    return "NA" if v is None or np.isnan(v) else f"{v:.6f}"


def report_csv(report: RmseReport) -> str:
    lines = ["activity,rmse"]
    lines += [f"{a},{_num(v)}" for a, v in report.per_activity.items()]
    lines.append(f"overall,{_num(report.overall)}")
    return "\n".join(lines) + "\n"


def subject_report_csv(report: RmseReport) -> str:
    lines = ["subject,activity,rmse"]
    for sid, e in report.per_subject.items():
        lines += [f"{sid},{a},{_num(v)}" for a, v in e["per_activity"].items()]
        lines.append(f"{sid},overall,{_num(e['overall'])}")
    return "\n".join(lines) + "\n"


def write_report(path, report: RmseReport) -> None:
    _atomic_write(path, report_csv(report))


def prediction_tables(results) -> dict:
    """``{(subject, session): csv text}`` with one prediction column per result.

    Columns are ``frame,ground_truth,pred_<name>...``; every result must come
    from the same dataset and stride.
    """
    results = list(results)
    base = results[0].samples
    tables = {}
    keys = sorted(set(zip(base.subject, base.session)))
    for sid, sess in keys:
        cols = ["frame", "ground_truth"] + [f"pred_{r.variant.lower()}" for r in results]
        lines = [",".join(cols)]
        columns = []
        for r in results:
            m = (r.samples.subject == sid) & (r.samples.session == sess)
            columns.append(dict(zip(r.samples.frame[m].tolist(), r.predictions[m])))
        sel = (base.subject == sid) & (base.session == sess)
        for t, gt in zip(base.frame[sel], base.target[sel]):
            row = [str(int(t)), _num(gt)] + [_num(c.get(int(t), np.nan)) for c in columns]
            lines.append(",".join(row))
        tables[(sid, sess)] = "\n".join(lines) + "\n"
    return tables


def sweep_csv(sweep: dict) -> str:
    return "T,overall_rmse\n" + "".join(f"{T},{_num(v)}\n" for T, v in sweep.items())
