import logging

import numpy as np
import pytest

from click_stats import (BackgroundCorrelation, CorrelationHistogram, PulseAveragedRate, RateSummary,
                         background_correlation, estimator_extrema, g2_histogram, noise_floor,
                         photon_pair_extrema, pulse_averaged_rate, same_atom_excess, split_background,
                         summarize_rates)
from conftest import make_stream, poisson_stream
from errors import AnalysisError, ValidationError

HIGH = RateSummary.from_rates(1976.0, 446.0)
LOW = RateSummary.from_rates(783.0, 446.0)


def _profile(rate, bin_ns=40, period_ns=4000):
    rate = np.asarray(rate, dtype=float)
    return PulseAveragedRate(phase_ns=bin_ns * np.arange(rate.size), rate=rate,
                             counts=np.zeros(rate.size, dtype=int), n_periods=1,
                             bin_ns=bin_ns, period_ns=period_ns)


def _square(high, low, n_bins=100):
    return np.concatenate([np.full(n_bins // 2, high), np.full(n_bins // 2, low)])


def test_rate_summary_examples():
    assert HIGH.i_photon == pytest.approx(1530.0)
    assert LOW.i_photon == pytest.approx(337.0)
    assert RateSummary.from_rates(500.0, 500.0).i_photon == 0.0


def test_negative_photon_rate_clamps_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        rates = RateSummary.from_rates(400.0, 446.0)
    assert rates.i_photon == 0.0
    assert "clamping" in caplog.text


@pytest.mark.parametrize("rates, expected", [(HIGH, (0.400, 1.600)), (LOW, (0.815, 1.185))])
def test_estimator_table(rates, expected):
    g2_min, g2_max = estimator_extrema(rates)
    assert g2_min == pytest.approx(expected[0], abs=0.005)
    assert g2_max == pytest.approx(expected[1], abs=0.005)
    assert g2_min + g2_max == pytest.approx(2.0, abs=1e-12)
    assert noise_floor(rates) == pytest.approx(g2_min, abs=1e-12)


def test_photon_pair_extrema():
    assert photon_pair_extrema(HIGH) == pytest.approx((0.0, 1.199), abs=1e-3)
    assert photon_pair_extrema(LOW) == pytest.approx((0.0, 0.371), abs=1e-3)
    assert photon_pair_extrema(RateSummary.from_rates(900.0, 0.0)) == (0.0, 2.0)
    assert noise_floor(RateSummary.from_rates(900.0, 0.0)) == 0.0
    assert estimator_extrema(RateSummary.from_rates(446.0, 446.0)) == (1.0, 1.0)


def test_zero_rate_is_an_analysis_error():
    with pytest.raises(AnalysisError):
        noise_floor(RateSummary.from_rates(0.0, 0.0))


def test_summarize_rates(schedule):
    stream = make_stream(np.zeros(16), np.tile([1, 2], 8), np.arange(16) * 1000, 1, schedule)
    rates = summarize_rates(stream, dark_rate=446.0)
    assert rates.i_bar == pytest.approx(16 / (2 * 0.008))
    assert rates.i_photon == pytest.approx(1000.0 - 446.0)
    with pytest.raises(AnalysisError):
        summarize_rates(make_stream([], [], [], 1, schedule), 446.0)


def test_hand_placed_pair(schedule):
    stream = make_stream([0, 0], [1, 2], [1000, 1512], 1, schedule)
    hist = g2_histogram(stream, bin_ns=100, range_ns=40000)
    assert hist.raw_pairs.sum() == 1
    hit = np.flatnonzero(hist.raw_pairs)[0]
    assert hist.lag_ns[hit] == 500
    assert hist.raw_pairs[hit] == 1


def test_pairs_never_cross_cycles(schedule):
    window = schedule.cycle_window_ns
    stream = make_stream([0, 1], [1, 2], [window - 10, 10], 2, schedule)
    assert g2_histogram(stream).raw_pairs.sum() == 0


def test_histogram_errors(schedule):
    stream = make_stream([0, 0], [1, 2], [10, 20], 1, schedule)
    with pytest.raises(ValidationError):
        g2_histogram(stream, range_ns=schedule.cycle_window_ns)
    with pytest.raises(AnalysisError):
        g2_histogram(make_stream([0, 0], [1, 1], [10, 20], 1, schedule))


def test_uncorrelated_streams_are_flat():
    stream = poisson_stream(np.random.default_rng(21), 1000, 100)
    hist = g2_histogram(stream, bin_ns=100, range_ns=40000)
    z = (hist.g2 - 1.0) / (1.0 / np.sqrt(hist.normalization))
    assert np.mean(np.abs(z) < 3) >= 0.98
    assert hist.g2.mean() == pytest.approx(1.0, abs=0.005)


def test_finite_window_normalization_at_long_lags():
    stream = poisson_stream(np.random.default_rng(8), 200, 100)
    hist = g2_histogram(stream, bin_ns=200000, range_ns=4000000)
    assert np.all(np.abs(hist.g2 - 1.0) < 0.03)

    window = stream.schedule.cycle_window_ns
    plain = hist.normalization * window / (window - np.abs(hist.centers_ns))
    outer = np.abs(hist.centers_ns) > 3500000
    assert np.all(hist.raw_pairs[outer] / plain[outer] < 0.6)


def test_pulse_average_of_uniform_stream(schedule):
    stream = poisson_stream(np.random.default_rng(2), 400, 50)
    rates = summarize_rates(stream, 0.0)
    profile = pulse_averaged_rate(stream)
    assert profile.mean_rate == pytest.approx(rates.i_bar, rel=1e-12)
    assert profile.counts.sum() == len(stream)
    expected_counts = len(stream) / profile.rate.size
    assert np.all(np.abs(profile.counts - expected_counts) < 4 * np.sqrt(expected_counts))


def test_pulse_average_single_phase(schedule):
    n = 20
    stream = make_stream(np.arange(n) % 4, np.ones(n), 1000 + 4000 * np.arange(n), 4, schedule)
    profile = pulse_averaged_rate(stream, detector=1)
    assert np.count_nonzero(profile.counts) == 1
    assert profile.phase_ns[np.flatnonzero(profile.counts)[0]] == 1000


def test_background_of_constant_profile_is_one():
    bg = background_correlation(_profile(np.full(100, 783.0)), _profile(np.full(100, 783.0)))
    assert np.allclose(bg.g2, 1.0)
    assert bg.g2_min == pytest.approx(1.0) and bg.g2_max == pytest.approx(1.0)


def test_background_of_square_wave_is_triangle():
    square = _profile(_square(2.0, 0.0))
    bg = background_correlation(square, square)
    m = np.arange(100)
    triangle = 2.0 * np.abs(50 - m) / 50
    assert np.allclose(bg.g2, triangle, atol=1e-12)
    assert bg.g2.mean() == pytest.approx(1.0)


def test_square_wave_on_noise_matches_estimators():
    square = _profile(_square(446.0 + 2 * 1530.0, 446.0))
    bg = background_correlation(square, square)
    g2_min, g2_max = estimator_extrema(HIGH)
    assert bg.g2_min == pytest.approx(g2_min, abs=1e-9)
    assert bg.g2_max == pytest.approx(g2_max, abs=1e-9)

    split = split_background(bg, HIGH)
    assert np.allclose(split.noise, noise_floor(HIGH))
    assert np.allclose(split.noise + split.different_atom, split.total)


def test_autocorrelation_mean_is_at_least_one():
    profile = _profile(np.random.default_rng(4).uniform(0, 5000, 100))
    assert background_correlation(profile, profile).g2.mean() >= 1.0 - 1e-12


def test_background_is_periodic():
    bg = background_correlation(_profile(_square(3.0, 1.0)), _profile(_square(3.0, 1.0)))
    lags = np.array([130.0, 1999.0, 3721.5])
    assert np.allclose(bg.at(lags), bg.at(lags + 4000.0))
    assert np.allclose(bg.at(lags), bg.at(lags - 12000.0))


def test_background_errors():
    with pytest.raises(AnalysisError):
        background_correlation(_profile(np.zeros(100)), _profile(np.ones(100)))
    with pytest.raises(ValidationError):
        background_correlation(_profile(np.ones(100)), _profile(np.ones(50), bin_ns=80))


def test_same_atom_excess_by_hand():
    lag = np.arange(-1000, 1000, 100)
    raw = np.full(lag.size, 10.0)
    raw[lag == 0] = 30.0
    norm = np.full(lag.size, 10.0)
    hist = CorrelationHistogram(100, 1000, lag, raw, norm, raw / norm, np.sqrt(raw) / norm)
    flat = BackgroundCorrelation(tau_ns=np.arange(0.0, 4000.0, 40.0), g2=np.ones(100), period_ns=4000)

    peak = same_atom_excess(hist, flat, center_ns=50, half_width_ns=60)
    assert peak.raw == 30 and peak.expected == pytest.approx(10.0)
    assert peak.excess == pytest.approx(20.0)
    assert peak.sigma == pytest.approx(np.sqrt(30.0))
    assert peak.g2_excess == pytest.approx(2.0)

    side = same_atom_excess(hist, flat, center_ns=-550, half_width_ns=250)
    assert side.excess == pytest.approx(0.0)
