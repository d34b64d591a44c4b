import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calorinet.core import (ACTIVITIES, ActivityLabel, Dataset, ParseError, Session, SubjectRecord,
                            ValidationError, hold_calories, load_dataset, load_session, read_pbm,
                            read_pgm, resample_accel, validate_dataset, write_dataset, write_pbm,
                            write_pgm)
from calorinet.synth import generate_dataset


def _same_dataset(a: Dataset, b: Dataset):
    assert a.subject_ids == b.subject_ids
    for sa, sb in zip(a, b):
        assert sa.weight_kg == pytest.approx(sb.weight_kg, abs=5e-7)
        assert sa.height_cm == pytest.approx(sb.height_cm, abs=5e-7)
        for x, y in zip(sa.sessions, sb.sessions):
            assert x.name == y.name
            np.testing.assert_array_equal(x.sil_frames, y.sil_frames)
            np.testing.assert_array_equal(x.masks, y.masks)
            np.testing.assert_array_equal(x.accel_frames, y.accel_frames)
            np.testing.assert_allclose(x.accel, y.accel, atol=5e-7, rtol=0)
            np.testing.assert_array_equal(x.cal_frames, y.cal_frames)
            np.testing.assert_array_equal(np.isnan(x.calories), np.isnan(y.calories))
            np.testing.assert_allclose(x.calories, y.calories, atol=5e-7, rtol=0)
            assert x.labels == y.labels


def test_round_trip(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path)
    _same_dataset(small_dataset, load_dataset(tmp_path))


def test_written_tree_layout(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path)
    sess = tmp_path / "subject01" / "session01"
    assert {p.name for p in sess.iterdir()} == {"silhouettes", "accel.csv", "calories.csv",
                                                "labels.csv", "meta.csv"}
    assert (sess / "accel.csv").read_text().splitlines()[0] == "frame,wx,wy,wz,ax,ay,az"
    assert (sess / "calories.csv").read_text().splitlines()[0] == "frame,kcal_per_min"
    assert "NA" in (sess / "calories.csv").read_text()
    assert (sess / "silhouettes" / "000000.pbm").exists()


def test_empty_subject_directory(tmp_path):
    (tmp_path / "subject01").mkdir()
    ds = load_dataset(tmp_path)
    assert len(ds) == 0


def test_unsorted_accel_rejected(tmp_path, small_dataset):
    write_dataset(small_dataset.select(["subject01"]), tmp_path)
    p = tmp_path / "subject01" / "session01" / "accel.csv"
    lines = p.read_text().splitlines()
    lines[2], lines[3] = lines[3], lines[2]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="subject01"):
        load_dataset(tmp_path)


def test_malformed_value_names_file_and_line(tmp_path, small_dataset):
    write_dataset(small_dataset.select(["subject01"]), tmp_path)
    p = tmp_path / "subject01" / "session01" / "calories.csv"
    lines = p.read_text().splitlines()
    lines[4] = "3,abc"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_dataset(tmp_path)
    assert "calories.csv" in str(err.value) and ":5" in str(err.value)


def test_negative_calories_rejected(tmp_path, small_dataset):
    write_dataset(small_dataset.select(["subject01"]), tmp_path)
    p = tmp_path / "subject01" / "session01" / "calories.csv"
    lines = p.read_text().splitlines()
    lines[1] = "0,-1.000000"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        load_dataset(tmp_path)


def test_overlapping_labels_rejected(tmp_path, small_dataset):
    write_dataset(small_dataset.select(["subject01"]), tmp_path)
    p = tmp_path / "subject01" / "session01" / "labels.csv"
    p.write_text("start,end,activity\n0,100,sit\n50,200,walk\n")
    with pytest.raises(ValidationError, match="overlap"):
        load_dataset(tmp_path)


def test_unknown_activity_rejected(tmp_path, small_dataset):
    write_dataset(small_dataset.select(["subject01"]), tmp_path)
    p = tmp_path / "subject01" / "session01" / "labels.csv"
    p.write_text("start,end,activity\n0,100,juggle\n")
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_load_single_session(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path)
    sess, w, h = load_session(tmp_path / "subject02" / "session01")
    assert w == pytest.approx(small_dataset.subject("subject02").weight_kg, abs=5e-7)
    assert len(sess.cal_frames) == len(small_dataset.subject("subject02").sessions[0].cal_frames)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), seed=st.integers(0, 2**16))
def test_pbm_round_trip(tmp_path_factory, h, w, seed):
    mask = np.random.default_rng(seed).integers(0, 2, size=(h, w)).astype(np.uint8)
    p = tmp_path_factory.mktemp("pbm") / "m.pbm"
    write_pbm(p, mask)
    np.testing.assert_array_equal(read_pbm(p), mask)


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (3, 4)
    assert np.max(np.abs(back / 255.0 - img)) <= 0.5 / 255 + 1e-12


def test_accel_resampled_linearly():
    frames, vals = resample_accel(np.array([0.0, 2.0]), np.array([[0.0] * 6, [2.0] * 6]))
    np.testing.assert_array_equal(frames, [0, 1, 2])
    np.testing.assert_allclose(vals[:, 0], [0, 1, 2])


def test_calories_zero_order_hold():
    frames, vals = hold_calories(np.array([0, 3]), np.array([1.0, np.nan]))
    np.testing.assert_array_equal(frames, [0, 1, 2, 3])
    np.testing.assert_array_equal(vals[:3], [1.0, 1.0, 1.0])
    assert np.isnan(vals[3])


def _session_with_gap():
    n = 400
    frames = np.arange(n)
    cal = np.full(n, 2.0)
    cal[100:201] = np.nan
    return Session.from_arrays("s", frames, np.zeros((n, 2, 2)), frames, np.zeros((n, 6)),
                               frames, cal, [ActivityLabel(0, 199, "sit")])


def test_validation_reports_exact_gap():
    ds = Dataset((SubjectRecord("a", 70.0, 170.0, (_session_with_gap(),)),))
    rep = validate_dataset(ds).subjects["a"][0]
    assert rep.calorie_gaps == [(100, 200)]
    assert rep.silhouette_gaps == []
    assert rep.label_coverage == pytest.approx(200 / 400)


def test_validation_gapless_and_subject_count():
    ds = generate_dataset(10, 1, 34.0, image_shape=(6, 8), seed=2)
    rep = validate_dataset(ds)
    assert len(rep.subjects) == 10
    for entries in rep.subjects.values():
        for r in entries:
            assert r.calorie_gaps == [] and r.silhouette_gaps == []


def test_session_lookups():
    s = _session_with_gap()
    assert s.calorie_at([0, 150, 999])[0] == 2.0
    assert np.isnan(s.calorie_at([150])[0]) and np.isnan(s.calorie_at([999])[0])
    assert list(s.label_at([0, 199, 200])) == ["sit", "sit", "unlabeled"]
    assert s.span == (0, 399)


def test_activity_classes():
    assert len(ACTIVITIES) == 11
