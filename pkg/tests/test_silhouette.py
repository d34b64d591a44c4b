import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calorinet.core import SilhouetteFrame
from calorinet.core import read_pgm
from calorinet.silhouette import (ConfigError, EngineStateError, SilhouetteEngine, StreamError,
                                  TemporalScaleConfig, brute_force_stack)


def _frames(n, h=4, w=5, seed=0, start=0, step=1):
    rng = np.random.default_rng(seed)
    return [SilhouetteFrame(start + i * step, rng.integers(0, 2, size=(h, w)).astype(np.uint8))
            for i in range(n)]


def test_default_schedule():
    assert TemporalScaleConfig().deltas == [1000, 333, 111, 37, 12]
    assert TemporalScaleConfig(250, 4).deltas == [250, 83, 27, 9, 3]
    assert TemporalScaleConfig().n_channels == 5


@pytest.mark.parametrize("T,N", [(2, 4), (1, 1), (10, 3), (0, 1)])
def test_collapsing_schedules_rejected(T, N):
    with pytest.raises(ConfigError):
        TemporalScaleConfig(T, N).validate()


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 5000), N=st.integers(0, 8))
def test_valid_schedules_strictly_decrease(T, N):
    cfg = TemporalScaleConfig(T, N)
    try:
        cfg.validate()
    except ConfigError:
        assert any(a <= b for a, b in zip(cfg.deltas, cfg.deltas[1:]))
        return
    d = cfg.deltas
    assert d[0] == T and all(a > b >= 1 for a, b in zip(d, d[1:]))
    assert d == [max(1, T // 3 ** k) for k in range(N + 1)]


@settings(max_examples=40, deadline=None)
@given(T=st.integers(3, 60), n=st.integers(1, 120), seed=st.integers(0, 1000))
def test_engine_matches_brute_force(T, n, seed):
    cfg = TemporalScaleConfig(T, 1 if T < 9 else 2)
    frames = _frames(n, seed=seed)
    eng = SilhouetteEngine(cfg, 5, 4)
    for f in frames:
        eng.push(f)
        ref = brute_force_stack(frames, cfg, f.timestamp)
        np.testing.assert_array_equal(eng.current_stack().channels, ref.channels)
        assert eng.resident_frames <= cfg.deltas[0]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000))
def test_stack_values_and_shape(seed):
    cfg = TemporalScaleConfig(30, 2)
    eng = SilhouetteEngine(cfg, 5, 4)
    for f in _frames(50, seed=seed):
        eng.push(f)
        st_ = eng.current_stack()
        assert st_.channels.shape == (4, 5, 3)
        assert st_.channels.min() >= 0.0 and st_.channels.max() <= 1.0


def test_warmup_uses_available_count():
    cfg = TemporalScaleConfig(9, 1)
    eng = SilhouetteEngine(cfg, 1, 1)
    eng.push(SilhouetteFrame(0, np.ones((1, 1), np.uint8)))
    eng.push(SilhouetteFrame(1, np.zeros((1, 1), np.uint8)))
    np.testing.assert_allclose(eng.current_stack().channels[0, 0], [0.5, 0.5])
    assert eng.window_counts() == [2, 2]


def test_constant_stream_reproduces_mask():
    cfg = TemporalScaleConfig(27, 3)
    mask = np.random.default_rng(3).integers(0, 2, size=(6, 7)).astype(np.uint8)
    eng = SilhouetteEngine(cfg, 7, 6)
    for t in range(100):
        eng.push(SilhouetteFrame(t, mask))
    for k in range(4):
        np.testing.assert_array_equal(eng.current_stack().channels[..., k], mask)


def test_out_of_order_and_shape_errors():
    eng = SilhouetteEngine(TemporalScaleConfig(9, 1), 5, 4)
    eng.push(SilhouetteFrame(5, np.zeros((4, 5), np.uint8)))
    with pytest.raises(StreamError):
        eng.push(SilhouetteFrame(5, np.zeros((4, 5), np.uint8)))
    with pytest.raises(StreamError):
        eng.push(SilhouetteFrame(6, np.zeros((5, 4), np.uint8)))


def test_empty_engine_has_no_stack():
    with pytest.raises(EngineStateError):
        SilhouetteEngine(TemporalScaleConfig(9, 1), 2, 2).current_stack()


def test_windows_count_frames_not_timestamps():
    # gaps in timestamps do not shrink windows: the last dt frames are averaged
    cfg = TemporalScaleConfig(9, 1)
    frames = _frames(30, seed=4, step=7)
    eng = SilhouetteEngine(cfg, 5, 4)
    for f in frames:
        eng.push(f)
    last9 = np.mean([f.mask for f in frames[-9:]], axis=0)
    np.testing.assert_allclose(eng.current_stack().channels[..., 0], last9)


def test_dump_writes_one_pgm_per_channel(tmp_path):
    eng = SilhouetteEngine(TemporalScaleConfig(9, 1), 5, 4)
    for f in _frames(10, seed=1, start=100):
        eng.push(f)
    paths = eng.current_stack().dump(tmp_path)
    assert [p.name for p in paths] == ["000109_scale0.pgm", "000109_scale1.pgm"]
    assert read_pgm(paths[0]).shape == (4, 5)
