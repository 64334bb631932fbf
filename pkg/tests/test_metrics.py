import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from trendrul.errors import CoverageError, EmptyInput, InvalidSigma, ShapeError
from trendrul.metrics import (
    PHM08_SCORE,
    DistributionTrack,
    EvaluationReport,
    ScoreConfig,
    baseline_distribution,
    lifetime_bins,
    mare,
    mpd,
    phm_score,
    rmse,
)

E_MINUS_1 = math.e - 1


def test_score_exact_predictions():
    assert phm_score([10, 50, 80], [10, 50, 80]) == 0.0


def test_score_branches():
    cfg = ScoreConfig()
    assert phm_score([100 - cfg.a_early], [100]) == pytest.approx(E_MINUS_1, abs=1e-9)
    assert phm_score([100 + cfg.a_late], [100]) == pytest.approx(E_MINUS_1, abs=1e-9)
    assert phm_score([110], [100], PHM08_SCORE) == pytest.approx(E_MINUS_1, abs=1e-9)


def test_score_defaults():
    assert ScoreConfig() == ScoreConfig(13.0, 15.0)
    assert PHM08_SCORE.a_late == 10.0
    with pytest.raises(ValueError):
        ScoreConfig(a_early=0)


@pytest.mark.parametrize("cfg", [ScoreConfig(), PHM08_SCORE, ScoreConfig(10, 13)])
@given(k=st.floats(0.01, 60))
def test_score_asymmetry(cfg, k):
    late, early = phm_score([k], [0], cfg), phm_score([-k], [0], cfg)
    if cfg.a_late < cfg.a_early:
        assert late > early
    else:
        assert late < early


def test_score_shape_mismatch():
    with pytest.raises(ShapeError):
        phm_score([1, 2], [1])


def test_rmse_values():
    assert rmse([5, 6], [5, 6]) == 0.0
    assert rmse([7.5], [3]) == 4.5
    assert rmse([3, 4], [0, 0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    with pytest.raises(EmptyInput):
        rmse([], [])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_rmse_properties(pairs):
    p, t = np.array(pairs).T
    assert rmse(p, t) == rmse(t, p)
    assert rmse(p, t) >= abs(np.mean(p - t)) - 1e-9


def track(mu, sigma):
    return DistributionTrack({u: m for u, m in mu.items()}, {u: s for u, s in sigma.items()})


def test_mpd_at_mean():
    mu = {1: np.linspace(0, 1, 7), 2: np.zeros(4)}
    one = {u: np.ones_like(m) for u, m in mu.items()}
    assert mpd(mu, track(mu, one)) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    half = {u: 0.5 * s for u, s in one.items()}
    assert mpd(mu, track(mu, half)) == pytest.approx(2 / math.sqrt(2 * math.pi), abs=1e-12)


def test_mpd_one_sigma_away():
    mu = {1: np.linspace(-1, 1, 9)}
    sigma = {1: np.full(9, 0.3)}
    feats = {1: mu[1] + 0.3}
    assert mpd(feats, track(mu, sigma)) == pytest.approx(norm.pdf(1.0) / 0.3, rel=1e-12)


def test_mpd_decreases_with_distance():
    mu = {1: np.zeros(5)}
    sigma = {1: np.full(5, 0.2)}
    vals = [mpd({1: np.full(5, d)}, track(mu, sigma)) for d in (0, 0.1, 0.2, 0.5)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_mpd_errors():
    mu = {1: np.zeros(3)}
    with pytest.raises(InvalidSigma):
        mpd(mu, track(mu, {1: np.array([1.0, 0.0, 1.0])}))
    with pytest.raises(CoverageError):
        mpd({2: np.zeros(3)}, track(mu, {1: np.ones(3)}))
    with pytest.raises(CoverageError):
        mpd({1: np.zeros(4)}, track(mu, {1: np.ones(3)}))


def test_mare():
    mu = {1: np.linspace(0, 1, 5), 2: np.zeros(5)}
    sig = {u: np.ones(5) for u in mu}
    assert mare(mu, track(mu, sig)) == 0.0
    assert mare({u: m + 0.25 for u, m in mu.items()}, track(mu, sig)) == pytest.approx(0.25)
    feats = {1: mu[1] + 0.1, 2: mu[2] - 0.3}
    assert mare(feats, track(mu, sig)) == pytest.approx(0.2)
    with pytest.raises(CoverageError):
        mare({3: np.zeros(5)}, track(mu, sig))


def test_lifetime_bins():
    b = lifetime_bins(100, 50)
    assert b[0] == 0 and b[-1] == 49 and np.all(np.diff(b) >= 0)
    assert list(lifetime_bins(2, 50)) == [24, 49]


def test_baseline_identical_units():
    shared = np.sin(np.linspace(0, 3, 100))
    tr = baseline_distribution({1: shared, 2: shared.copy(), 3: shared.copy()}, bins=100)
    np.testing.assert_allclose(tr.mean[1], shared, atol=1e-12)
    np.testing.assert_array_equal(tr.std[2], 1e-3)


def test_baseline_recovers_noise_level():
    rng = np.random.default_rng(0)
    shared = np.linspace(-1, 1, 200) ** 2
    units = {u: shared + rng.normal(0, 0.1, 200) for u in range(40)}
    tr = baseline_distribution(units, bins=50)
    assert np.all((tr.std[0] >= 0.07) & (tr.std[0] <= 0.13))


def test_baseline_borrows_neighbour_bins():
    # short units leave most bins empty
    tr = baseline_distribution({1: np.array([0.0, 1.0]), 2: np.array([0.2, 1.2])}, bins=10)
    np.testing.assert_allclose(tr.mean[1], [0.1, 1.1])
    assert tr.estimator == "binned-lifetime-fraction"


def test_baseline_needs_two_units():
    with pytest.raises(ValueError):
        baseline_distribution({1: np.zeros(10)})


def test_baseline_covers_targets():
    units = {1: np.zeros(30), 2: np.ones(40)}
    tr = baseline_distribution(units, targets={9: np.zeros(7)})
    assert set(tr.mean) == {9} and tr.mean[9].size == 7


def test_report_json(tmp_path):
    rep = EvaluationReport.build([3, 4], [10.0, 20.0], [10.0, 20.0])
    assert rep.score == 0.0 and rep.rmse == 0.0
    rep.write(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["units"][1] == {"unit_id": 4, "predicted": 20.0, "true": 20.0}
    assert doc["score_config"] == {"a_early": 13.0, "a_late": 15.0}
