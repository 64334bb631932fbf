import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trendrul.cmapss import EngineUnit
from trendrul.errors import InvalidWindow, SensorDegenerate
from trendrul.timeseries import (
    NormalizationStats,
    Series,
    fit_normalization,
    min_max_normalize,
    sliding_mean,
)


def make_unit(uid, values, sensor=2):
    n = len(values)
    sensors = np.zeros((n, 21))
    sensors[:, sensor - 1] = values
    return EngineUnit(uid, np.arange(1, n + 1), np.zeros((n, 3)), sensors)


def test_series_cycles_and_readonly():
    s = Series([1.0, 2.0, 3.0], start_cycle=5)
    assert list(s.cycles) == [5, 6, 7]
    assert len(s) == 3
    with pytest.raises(ValueError):
        s.values[0] = 9.0


@pytest.mark.parametrize("bad", [[], [1.0, np.nan], [[1.0, 2.0]]])
def test_series_rejects_invalid(bad):
    with pytest.raises(ValueError):
        Series(bad)


def test_fit_normalization_spans_all_units():
    units = [make_unit(1, [641.21, 642.0, 644.53]), make_unit(2, [643.0, 642.5])]
    stats = fit_normalization(units, 2)
    assert (stats.minimum, stats.maximum) == (641.21, 644.53)


def test_fit_normalization_union_of_ranges():
    stats = fit_normalization([make_unit(1, [0.0, 1.0]), make_unit(2, [-2.0, 3.0])], 2)
    assert (stats.minimum, stats.maximum) == (-2.0, 3.0)


def test_constant_sensor_is_degenerate():
    with pytest.raises(SensorDegenerate):
        fit_normalization([make_unit(1, [100.0] * 5)], 2)


def test_normalize_bounds_and_midpoint():
    stats = NormalizationStats(2, 10.0, 30.0)
    assert min_max_normalize(10.0, stats) == -1.0
    assert min_max_normalize(30.0, stats) == 1.0
    assert min_max_normalize(20.0, stats) == 0.0
    # test data outside the training range is not clipped
    assert min_max_normalize(40.0, stats) == 2.0


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(finite, st.floats(1e-3, 1e6), finite)
def test_normalize_round_trip(lo, span, x):
    stats = NormalizationStats(0, lo, lo + span)
    back = stats.denormalize(stats.normalize(x))
    assert abs(back - x) <= 1e-12 * max(abs(x), abs(lo), span) * 10


@given(finite, st.floats(1e-3, 1e6), finite, finite)
def test_normalize_monotone(lo, span, a, b):
    stats = NormalizationStats(0, lo, lo + span)
    if a < b:
        assert stats.normalize(a) <= stats.normalize(b)


def test_stats_dict_round_trip():
    stats = NormalizationStats(7, -1.5, 2.25)
    assert NormalizationStats.from_dict(stats.to_dict()) == stats


def test_sliding_mean_spike_centre():
    assert sliding_mean([0, 0, 5, 0, 0], 5)[2] == pytest.approx(1.0)


def test_sliding_mean_truncates_at_edges():
    out = sliding_mean([0, 0, 5, 0, 0], 5)
    # index 0 averages samples 0..2 only
    assert out[0] == pytest.approx(5 / 3)
    assert out[1] == pytest.approx(5 / 4)


def test_sliding_mean_ramp_interior():
    ramp = np.arange(20.0)
    out = sliding_mean(ramp, 7)
    np.testing.assert_allclose(out[3:-3], ramp[3:-3])


@pytest.mark.parametrize("window", [0, 2, 4, -1])
def test_sliding_mean_rejects_even_windows(window):
    with pytest.raises(InvalidWindow):
        sliding_mean([1.0, 2.0, 3.0], window)


@given(st.lists(finite, min_size=1, max_size=60), st.sampled_from([1, 3, 5, 9, 101]))
def test_sliding_mean_length_and_identity(values, window):
    out = sliding_mean(values, window)
    assert out.shape == (len(values),)
    if window == 1:
        np.testing.assert_array_equal(out, values)


@given(st.floats(-1e3, 1e3), st.integers(1, 50), st.sampled_from([1, 3, 5, 11]))
def test_sliding_mean_constant(c, n, window):
    np.testing.assert_allclose(sliding_mean(np.full(n, c), window), c, rtol=1e-12, atol=1e-12)


def test_sliding_mean_accepts_series():
    np.testing.assert_allclose(sliding_mean(Series([1.0, 2.0, 3.0]), 3), [1.5, 2.0, 2.5])
