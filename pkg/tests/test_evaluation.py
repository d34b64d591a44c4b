import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calorinet.config import ExperimentConfig
from calorinet.core import UNLABELED, Dataset, Session, SubjectRecord
from calorinet.evaluation import (InputSpec, ReportError, SampleSet, buffer_sweep, evaluate_loso,
                                  evaluate_mets, extract_samples, impute_missing, loso_folds,
                                  prediction_tables, report_csv, rmse_report, split_validation,
                                  sweep_csv, tick_frames)
from calorinet.models import build_variant
from calorinet.nn import TrainConfig
from calorinet.silhouette import TemporalScaleConfig, brute_force_stack

SCALES = TemporalScaleConfig(81, 4)


def _ids(n):
    return [f"s{i:02d}" for i in range(n)]


# ------------------------------------------------------------------ folds

def test_ten_subjects_ten_folds():
    folds = loso_folds(_ids(10), seed=1)
    assert len(folds) == 10
    assert all(len(f.train_subjects) == 9 and f.test_subject not in f.train_subjects for f in folds)
    assert sorted(f.test_subject for f in folds) == _ids(10)
    assert len({f.seed for f in folds}) == 10


def test_two_subjects_and_too_few():
    assert len(loso_folds(_ids(2))) == 2
    with pytest.raises(ValueError):
        loso_folds(_ids(1))


def test_fold_order_is_by_id():
    assert [f.test_subject for f in loso_folds(["b", "a", "c"])] == ["a", "b", "c"]
    assert loso_folds(["b", "a"], 3) == loso_folds(["a", "b"], 3)


# ------------------------------------------------------------------- RMSE

def test_perfect_predictions():
    gt = {"a": np.array([1.0, 2.0]), "b": np.array([3.0])}
    labs = {"a": np.array(["sit", "walk"], object), "b": np.array(["sit"], object)}
    rep = rmse_report(gt, gt, labs)
    assert rep.overall == 0 and all(v == 0 for v in rep.per_activity.values())


def test_single_activity_plus_minus_one():
    rep = rmse_report({"a": np.array([2.0, 0.0])}, {"a": np.array([1.0, 1.0])},
                      {"a": np.array(["walk", "walk"], object)})
    assert rep.per_activity == {"walk": 1.0}


def test_mean_across_subjects_not_pooled():
    gt = {"a": np.zeros(4), "b": np.zeros(4)}
    pred = {"a": np.ones(4), "b": np.full(4, 3.0)}
    labs = {k: np.array(["sit"] * 4, object) for k in gt}
    rep = rmse_report(pred, gt, labs)
    assert rep.overall == 2.0
    assert rep.per_activity["sit"] == 2.0


def test_absent_activities_are_absent():
    rep = rmse_report({"a": np.array([1.0])}, {"a": np.array([1.0])}, {"a": np.array(["sit"], object)})
    assert set(rep.per_activity) == {"sit"}


def test_unlabeled_counts_only_overall():
    rep = rmse_report({"a": np.array([1.0, 3.0])}, {"a": np.array([1.0, 1.0])},
                      {"a": np.array(["sit", UNLABELED], object)})
    assert rep.per_activity == {"sit": 0.0}
    assert rep.overall == pytest.approx(np.sqrt(2.0))


def test_nothing_evaluable():
    with pytest.raises(ReportError):
        rmse_report({"a": np.array([np.nan])}, {"a": np.array([1.0])}, {"a": np.array(["sit"], object)})


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_missing=st.integers(0, 10))
def test_rmse_invariances(seed, n_missing):
    rng = np.random.default_rng(seed)
    acts = np.array(["sit", "walk", "read", UNLABELED], dtype=object)
    gt, pred, labs = {}, {}, {}
    for s in ("x", "y", "z"):
        n = int(rng.integers(3, 20))
        gt[s] = rng.uniform(1, 4, n)
        pred[s] = gt[s] + rng.normal(0, 0.5, n)
        labs[s] = acts[rng.integers(0, 4, n)]
    base = rmse_report(pred, gt, labs)
    # frame order and subject order
    perm = {s: rng.permutation(len(gt[s])) for s in gt}
    keys = list(gt)[::-1]
    shuffled = rmse_report({s: pred[s][perm[s]] for s in keys}, {s: gt[s][perm[s]] for s in keys},
                           {s: labs[s][perm[s]] for s in keys})
    assert shuffled.overall == pytest.approx(base.overall, rel=1e-12)
    for a, v in base.per_activity.items():
        assert shuffled.per_activity[a] == pytest.approx(v, rel=1e-12)
    # appending missing ground truth changes nothing
    pad = lambda d, v: {s: np.concatenate([d[s], np.full(n_missing, v)]) for s in d}
    padded = rmse_report(pad(pred, 2.0), pad(gt, np.nan),
                         {s: np.concatenate([labs[s], np.array(["sit"] * n_missing, object)]) for s in labs})
    assert padded.overall == base.overall and padded.per_activity == base.per_activity
    assert base.overall >= 0 and all(np.isfinite(v) and v >= 0 for v in base.per_activity.values())


def test_report_csv_layout():
    rep = rmse_report({"a": np.array([2.0, 0.0])}, {"a": np.array([1.0, 1.0])},
                      {"a": np.array(["walk", "sit"], object)})
    lines = report_csv(rep).splitlines()
    assert lines[0] == "activity,rmse"
    assert lines[-1] == "overall,1.000000"
    assert {l.split(",")[0] for l in lines[1:-1]} == {"walk", "sit"}


# ----------------------------------------------------------- imputation

def _samples(subjects, labels, has_sil, has_acc):
    n = len(subjects)
    return SampleSet(
        subject=np.array(subjects, object), session=np.array(["s1"] * n, object),
        frame=np.arange(n) * 30, label=np.array(labels, object), target=np.ones(n),
        has_sil=np.array(has_sil), has_acc=np.array(has_acc),
        silhouette=np.arange(n, dtype=np.float32)[:, None, None, None] * np.ones((n, 2, 2, 1), np.float32),
        accel=np.arange(n, dtype=np.float32)[:, None, None] * np.ones((n, 3, 6), np.float32),
        warmup=np.zeros(n, bool))


SPEC = InputSpec(True, True, SCALES, 3, True)


def test_imputation_identity_without_gaps():
    s = _samples(["a", "a"], ["sit", "sit"], [True, True], [True, True])
    out, dropped = impute_missing(s, np.random.default_rng(0), SPEC)
    assert dropped == 0
    np.testing.assert_array_equal(out.silhouette, s.silhouette)


def test_imputation_copies_single_donor():
    s = _samples(["a", "a", "b"], ["sit", "sit", "sit"], [False, True, True], [True, True, True])
    out, dropped = impute_missing(s, np.random.default_rng(0), SPEC)
    assert dropped == 0 and out.has_sil.all()
    np.testing.assert_array_equal(out.silhouette[0], s.silhouette[1])


def test_imputation_drops_without_donor():
    s = _samples(["a", "a", "b"], ["sit", "walk", "sit"], [False, True, True], [True, True, True])
    out, dropped = impute_missing(s, np.random.default_rng(0), SPEC)
    assert dropped == 1 and len(out) == 2 and list(out.frame) == [30, 60]


def test_imputation_is_seeded():
    s = _samples(["a"] * 6, ["sit"] * 6, [False, True, True, True, True, True], [True] * 6)
    a, _ = impute_missing(s, np.random.default_rng(3), SPEC)
    b, _ = impute_missing(s, np.random.default_rng(3), SPEC)
    np.testing.assert_array_equal(a.silhouette, b.silhouette)


def test_validation_split_takes_session_tails():
    s = _samples(["a"] * 10 + ["b"] * 10, ["sit"] * 20, [True] * 20, [True] * 20)
    tr, va = split_validation(s, 0.1)
    assert sorted(va.tolist()) == [9, 19]
    assert sorted(tr.tolist() + va.tolist()) == list(range(20))


# ------------------------------------------------------------ extraction

def test_extracted_samples_match_oracles(small_dataset):
    v = build_variant("CaloriNet", (12, 16), SCALES, seed=0)
    spec = InputSpec.for_variant(v, 30)
    s = extract_samples(small_dataset, spec)
    subj = small_dataset.subject("subject01")
    sess = subj.sessions[0]
    sel = np.flatnonzero(s.subject == "subject01")
    np.testing.assert_array_equal(s.frame[sel], tick_frames(sess, 30))
    frames = list(sess.silhouette_frames())
    have = set(sess.sil_frames.tolist())
    for i in sel[:12]:
        t = int(s.frame[i])
        assert s.has_sil[i] == (t in have)
        if t in have:
            ref = brute_force_stack(frames, SCALES, t).channels.astype(np.float32)
            np.testing.assert_array_equal(s.silhouette[i], ref)
    assert s.silhouette.dtype == np.float32 and s.accel.shape[1:] == (81, 6)
    # gapped silhouettes exist in the fixture
    assert not s.has_sil.all()


def test_mets_evaluation_is_stepwise(small_dataset):
    cfg = ExperimentConfig(seed=0, scales=SCALES)
    r = evaluate_mets(small_dataset, cfg)
    unl = r.samples.label == UNLABELED
    assert np.all(np.isnan(r.predictions[unl])) and np.all(np.isfinite(r.predictions[~unl]))
    assert r.report.overall > 0


def _quick_cfg(**kw):
    train = TrainConfig(epochs=2, model_selection=False, learning_rate=1e-3, batch_size=16)
    return ExperimentConfig(seed=5, scales=SCALES, augment_enabled=False, train=train, **kw)


def test_loso_runs_and_has_no_leakage(small_dataset):
    r = evaluate_loso(small_dataset, _quick_cfg(), "AccuCalNet")
    assert len(r.folds) == 3
    for f in r.folds:
        assert set(r.samples.subject[f.test_index]) == {f.plan.test_subject}
    assert np.isfinite(r.report.overall)


def test_loso_deterministic_and_parallel_equal(small_dataset):
    a = evaluate_loso(small_dataset, _quick_cfg(), "SiluCalNet")
    b = evaluate_loso(small_dataset, _quick_cfg(), "SiluCalNet", jobs=2)
    np.testing.assert_array_equal(a.predictions, b.predictions)


def test_missing_modality_test_samples_excluded(small_dataset):
    r = evaluate_loso(small_dataset, _quick_cfg(), "SiluCalNet")
    s = extract_samples(small_dataset, InputSpec(True, False, SCALES, 0, True))
    assert np.all(np.isnan(r.predictions[~s.has_sil]))


def test_warmup_exclusion(small_dataset):
    a = evaluate_mets(small_dataset, _quick_cfg())
    b = evaluate_mets(small_dataset, _quick_cfg(exclude_warmup=True))
    assert np.isnan(b.predictions[b.samples.warmup]).all()
    assert np.isfinite(a.predictions[a.samples.warmup & (a.samples.label != UNLABELED)]).all()


def test_prediction_tables(small_dataset):
    cfg = _quick_cfg()
    tables = prediction_tables([evaluate_mets(small_dataset, cfg)])
    assert len(tables) == 3
    text = tables[("subject01", "session01")]
    assert text.splitlines()[0] == "frame,ground_truth,pred_mets"


def test_single_value_sweep_matches_direct(small_dataset):
    cfg = _quick_cfg()
    sweep = buffer_sweep(small_dataset, [81], "AccuCalNet", cfg)
    direct = evaluate_loso(small_dataset, dataclasses.replace(cfg, accel_len=None), "AccuCalNet")
    assert sweep == {81: direct.report.overall}
    assert sweep_csv(sweep).splitlines()[0] == "T,overall_rmse"


def test_contract_error_for_silhouette_only_dataset(small_dataset):
    from calorinet.models import InputContractError
    subjects = []
    for s in small_dataset:
        sess = [Session.from_arrays(x.name, x.sil_frames, x.masks, cal_frames=x.cal_frames,
                                    calories=x.calories, labels=x.labels) for x in s.sessions]
        subjects.append(SubjectRecord(s.subject_id, s.weight_kg, s.height_cm, tuple(sess)))
    with pytest.raises(InputContractError):
        evaluate_loso(Dataset(tuple(subjects)), _quick_cfg(), "CaloriNet")
