import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trendrul.cmapss import (
    ALL_SENSORS,
    DEFAULT_SENSORS,
    Dataset,
    EngineUnit,
    LabeledSequence,
    augment,
    format_unit_rows,
    label_rul,
    pad_and_mask,
    parse_cmapss,
    select_sensors,
    stack_batch,
)
from trendrul.errors import EmptySensorSet, PadTooShort, ParseError, RoleError, RulFileMismatch
from trendrul.synthetic import degradation_fleet, truncate_for_test, write_cmapss

CMAPSS_DIR = os.environ.get("TRENDRUL_CMAPSS_DIR")


def unit(n, role="train", final_rul=0, uid=1):
    rng = np.random.default_rng(n)
    return EngineUnit(uid, np.arange(1, n + 1), rng.normal(size=(n, 3)), rng.normal(size=(n, 21)),
                      role, final_rul)


@pytest.fixture
def files(tmp_path):
    train = degradation_fleet(4, seed=1)
    test, ruls = truncate_for_test(degradation_fleet(3, seed=2), seed=3)
    return write_cmapss(tmp_path, "FD009", train, test, ruls), train, test, ruls


def test_parse_groups_units_and_assigns_rul(files):
    paths, train, test, ruls = files
    ds = parse_cmapss(paths["train"], paths["test"], paths["rul"])
    assert ds.subset == "FD009"
    assert [u.unit_id for u in ds.by_role("train")] == [1, 2, 3, 4]
    assert [u.final_rul for u in ds.by_role("test")] == ruls
    assert all(u.final_rul == 0 for u in ds.by_role("train"))
    np.testing.assert_array_equal(ds.by_role("train")[2].sensors, train[2].sensors)


def test_parse_sorts_rows_by_cycle(tmp_path):
    u = unit(5)
    lines = format_unit_rows(u).splitlines()
    (tmp_path / "train_X.txt").write_text("\n".join(reversed(lines)) + "\n")
    parsed = parse_cmapss(tmp_path / "train_X.txt").units[0]
    np.testing.assert_array_equal(parsed.cycles, np.arange(1, 6))
    np.testing.assert_array_equal(parsed.sensors, u.sensors)


def test_round_trip_is_exact(files):
    paths, *_ = files
    ds = parse_cmapss(paths["train"])
    text = "".join(format_unit_rows(u) for u in ds.units)
    assert text == paths["train"].read_text()


def test_parse_error_reports_line(tmp_path):
    rows = format_unit_rows(unit(3)).splitlines()
    rows[1] = " ".join(rows[1].split()[:25])
    path = tmp_path / "train_bad.txt"
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(ParseError) as info:
        parse_cmapss(path)
    assert info.value.line == 2


def test_rul_file_mismatch(files, tmp_path):
    paths, *_ = files
    short = tmp_path / "RUL_short.txt"
    short.write_text("10\n")
    with pytest.raises(RulFileMismatch):
        parse_cmapss(paths["train"], paths["test"], short)


@pytest.mark.skipif(not CMAPSS_DIR, reason="TRENDRUL_CMAPSS_DIR not set")
@pytest.mark.parametrize("subset,n_train,n_test", [("FD001", 100, 100), ("FD002", 260, 259)])
def test_real_unit_counts(subset, n_train, n_test):
    base = Path(CMAPSS_DIR)
    ds = parse_cmapss(base / f"train_{subset}.txt", base / f"test_{subset}.txt",
                      base / f"RUL_{subset}.txt")
    assert len(ds.by_role("train")) == n_train
    assert len(ds.by_role("test")) == n_test


def test_select_sensors():
    ds = Dataset("FD001", [unit(6)])
    sel = select_sensors(ds)
    assert sel.sensor_set == DEFAULT_SENSORS and sel.units[0].sensors.shape == (6, 13)
    np.testing.assert_array_equal(sel.units[0].sensor(7), ds.units[0].sensor(7))
    full = select_sensors(ds, ALL_SENSORS)
    np.testing.assert_array_equal(full.units[0].sensors, ds.units[0].sensors)
    # retained in ascending order regardless of input order
    assert select_sensors(ds, [9, 2, 4]).sensor_set == (2, 4, 9)
    with pytest.raises(EmptySensorSet):
        select_sensors(ds, [])
    with pytest.raises(ValueError):
        select_sensors(ds, [0, 22])


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        Dataset("FD001", [unit(3), unit(4)])
    Dataset("FD001", [unit(3), unit(4, role="test")])


def test_labels():
    lab = label_rul(unit(200))
    assert lab[0] == 130 and lab[-1] == 0
    lab = label_rul(unit(50))
    assert lab[0] == 49 and lab[-1] == 0
    lab = label_rul(unit(100, role="test", final_rul=20))
    assert lab[-1] == 20 and lab[0] == 119


@given(st.integers(1, 300), st.integers(0, 200), st.integers(1, 200))
def test_labels_piecewise_linear(n, final_rul, cap):
    lab = label_rul(unit(n, final_rul=final_rul), cap)
    d = np.diff(lab)
    assert np.all(d <= 0)
    below = lab[1:] < cap
    assert np.all(d[below] == -1)


def test_augment_counts_and_labels():
    u = unit(150)
    crops = dict((k, c) for c, k in augment([u]))
    assert crops[100].n_cycles == 50 and label_rul(crops[100])[-1] == 100
    assert len(augment([unit(80)])) == 79
    assert len(augment([unit(250)])) == 100
    assert [k for _, k in augment([unit(250)], stride=10)] == list(range(1, 101, 10))


def test_augment_copies_are_prefixes():
    u = unit(40)
    for c, k in augment([u], stride=7):
        np.testing.assert_array_equal(c.sensors, u.sensors[: 40 - k])
        np.testing.assert_array_equal(c.op_settings, u.op_settings[: 40 - k])
        assert c.final_rul == k


def test_augment_rejects_test_units():
    with pytest.raises(RoleError):
        augment([unit(30, role="test")])


def seq(n, width=2, value=1.0):
    return LabeledSequence(np.full((n, width), value), np.linspace(1, -1, n))


def test_pad_and_mask():
    a, b = pad_and_mask([seq(3), seq(5)], 5)
    assert list(a.mask) == [False, False, True, True, True]
    np.testing.assert_array_equal(a.features[:2], 0)
    np.testing.assert_array_equal(a.labels[:2], 0)
    assert b.mask.all()
    with pytest.raises(PadTooShort):
        pad_and_mask([seq(6)], 5)


@given(st.lists(st.integers(1, 30), min_size=1, max_size=8), st.integers(0, 5))
def test_pad_conserves_real_steps(lengths, extra):
    target = max(lengths) + extra
    for s, n in zip(pad_and_mask([seq(n) for n in lengths], target), lengths):
        assert len(s) == target and int(s.mask.sum()) == n
        assert not np.any(s.mask[: target - n])


def test_stack_batch_shapes():
    X, Y, M = stack_batch([seq(3, 4), seq(7, 4)])
    assert X.shape == (2, 7, 4) and Y.shape == (2, 7) and M.shape == (2, 7)


def test_truncate_shifts_rul():
    u = unit(20)
    t = u.truncate(15)
    assert t.n_cycles == 15 and t.final_rul == 5
