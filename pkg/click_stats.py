#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Unconditional photon statistics of a two-detector (HBT) click stream:
rate summary, cross-correlation histogram g2(tau), pulse-averaged rate,
the periodic background predicted by convolving pulse-averaged rates, and
the closed-form noise / photon-pair estimators.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errors import AnalysisError, ValidationError
from source_sim import ClickStream

logger = logging.getLogger(__name__)

DEFAULT_BIN_NS = 100
DEFAULT_RANGE_NS = 40000
PHASE_BIN_NS = 40
BIN_AVERAGE_SAMPLES = 9


@dataclass(frozen=True)
class RateSummary:
    """Mean rates per detector in 1/s."""
    i_bar: float
    i_noise: float
    i_photon: float

    def __post_init__(self):
        if self.i_bar < 0 or self.i_noise < 0 or self.i_photon < 0:
            raise ValidationError("rates must be >= 0")

    @classmethod
    def from_rates(cls, i_bar: float, i_noise: float) -> "RateSummary":
        """i_photon = i_bar - i_noise, clamped at 0 (noise overestimate) with a warning."""
        if i_bar < 0 or i_noise < 0:
            raise ValidationError(f"rates must be >= 0, got i_bar={i_bar}, i_noise={i_noise}")
        i_photon = i_bar - i_noise
        if i_photon < 0:
            logger.warning(f"Noise rate {i_noise:.1f} exceeds mean rate {i_bar:.1f}; clamping I_P to 0")
            i_photon = 0.0
            i_noise = i_bar
        return cls(i_bar=float(i_bar), i_noise=float(i_noise), i_photon=float(i_photon))

    @property
    def photon_fraction(self) -> float:
        if self.i_bar <= 0:
            raise AnalysisError("mean count rate is zero")
        return self.i_photon / self.i_bar


def summarize_rates(clicks: ClickStream, dark_rate: float) -> RateSummary:
    """Mean count rate per detector over the whole observation time."""
    if len(clicks) == 0:
        raise AnalysisError("click stream is empty")
    total_time = clicks.total_time
    if total_time <= 0:
        raise AnalysisError("observation time is zero")
    i_bar = len(clicks) / (2.0 * total_time)
    return RateSummary.from_rates(i_bar, dark_rate)


@dataclass
class CorrelationHistogram:
    bin_width_ns: int
    lag_range_ns: int
    lag_ns: np.ndarray          # left bin edges
    raw_pairs: np.ndarray
    normalization: np.ndarray   # expected pairs for uncorrelated light
    g2: np.ndarray
    sigma: np.ndarray

    @property
    def centers_ns(self) -> np.ndarray:
        return self.lag_ns + 0.5 * self.bin_width_ns


def _check_range(clicks: ClickStream, bin_ns: int, range_ns: int) -> int:
    if bin_ns <= 0 or range_ns <= 0:
        raise ValidationError("bin width and lag range must be > 0")
    if range_ns >= clicks.schedule.cycle_window_ns:
        raise ValidationError(f"lag range {range_ns} ns must be shorter than the cycle window "
                              f"({clicks.schedule.cycle_window_ns} ns)")
    if (2 * range_ns) % bin_ns:
        raise ValidationError(f"2 * lag range ({2 * range_ns} ns) is not a multiple of the bin width")
    return 2 * range_ns // bin_ns


def g2_histogram(clicks: ClickStream, bin_ns: int = DEFAULT_BIN_NS,
                 range_ns: int = DEFAULT_RANGE_NS) -> CorrelationHistogram:
    """
    Cross-correlation of detector 1 and detector 2 within each cycle.
    Bin b covers lags t2 - t1 in [-range + b*bin, -range + (b+1)*bin).
    """
    n_bins = _check_range(clicks, bin_ns, range_ns)
    det1 = clicks.detector == 1
    det2 = clicks.detector == 2
    if not det1.any() or not det2.any():
        raise AnalysisError("both detectors need at least one click")

    # spacing cycles far apart on a common axis keeps cross-cycle pairs out of range
    stride = clicks.schedule.cycle_window_ns + 2 * range_ns
    t1 = clicks.cycle_id[det1] * stride + clicks.timestamp_ns[det1]
    t2 = np.sort(clicks.cycle_id[det2] * stride + clicks.timestamp_ns[det2])

    lo = np.searchsorted(t2, t1 - range_ns, side="left")
    hi = np.searchsorted(t2, t1 + range_ns, side="left")
    per_click = hi - lo
    total = int(per_click.sum())
    first = np.repeat(lo, per_click)
    offset = np.arange(total) - np.repeat(np.cumsum(per_click) - per_click, per_click)
    lags = t2[first + offset] - np.repeat(t1, per_click)
    bins = (lags + range_ns) // bin_ns
    raw = np.bincount(bins, minlength=n_bins)[:n_bins].astype(float)

    n1 = np.bincount(clicks.cycle_id[det1], minlength=clicks.n_cycles)
    n2 = np.bincount(clicks.cycle_id[det2], minlength=clicks.n_cycles)
    pair_product = float(np.dot(n1.astype(float), n2.astype(float)))
    window = float(clicks.schedule.cycle_window_ns)
    left = -range_ns + bin_ns * np.arange(n_bins)
    centers = left + 0.5 * bin_ns
    normalization = pair_product * bin_ns * (window - np.abs(centers)) / window ** 2

    g2 = raw / normalization
    sigma = np.sqrt(raw) / normalization
    logger.info(f"g2 histogram: {total} pairs in {n_bins} bins of {bin_ns} ns")
    return CorrelationHistogram(bin_ns, range_ns, left, raw, normalization, g2, sigma)


@dataclass
class PulseAveragedRate:
    """Count rate per detector folded modulo the drive period."""
    phase_ns: np.ndarray        # left edges of the phase bins
    rate: np.ndarray            # 1/s
    counts: np.ndarray
    n_periods: int
    bin_ns: int
    period_ns: int

    @property
    def mean_rate(self) -> float:
        return float(self.rate.mean())


def pulse_averaged_rate(clicks: ClickStream, detector: int = None,
                        phase_bin_ns: int = PHASE_BIN_NS) -> PulseAveragedRate:
    """
    Fold clicks modulo tau_period. With detector=None the two detectors are
    pooled and the rate is reported per detector (total / 2).
    """
    if len(clicks) == 0:
        raise AnalysisError("click stream is empty")
    period = clicks.schedule.tau_period_ns
    if phase_bin_ns <= 0 or period % phase_bin_ns:
        raise ValidationError(f"phase bin {phase_bin_ns} ns must divide the period {period} ns")

    if detector is None:
        ts, share = clicks.timestamp_ns, 0.5
    elif detector in (1, 2):
        ts, share = clicks.timestamp_ns[clicks.detector == detector], 1.0
    else:
        raise ValidationError(f"detector must be 1, 2 or None, got {detector}")

    n_bins = period // phase_bin_ns
    counts = np.bincount((ts % period) // phase_bin_ns, minlength=n_bins)
    n_periods = clicks.n_cycles * clicks.schedule.pulses_per_cycle
    rate = share * counts / (n_periods * phase_bin_ns * 1e-9)
    return PulseAveragedRate(phase_ns=phase_bin_ns * np.arange(n_bins), rate=rate, counts=counts,
                             n_periods=n_periods, bin_ns=phase_bin_ns, period_ns=period)


@dataclass
class BackgroundCorrelation:
    """Periodic g2_C(tau) on one period of lags."""
    tau_ns: np.ndarray
    g2: np.ndarray
    period_ns: int

    @property
    def g2_min(self) -> float:
        return float(self.g2.min())

    @property
    def g2_max(self) -> float:
        return float(self.g2.max())

    def at(self, lags_ns) -> np.ndarray:
        """Periodic linear interpolation at arbitrary lags."""
        phase = np.mod(np.asarray(lags_ns, dtype=float), self.period_ns)
        xp = np.append(self.tau_ns, self.period_ns)
        fp = np.append(self.g2, self.g2[0])
        return np.interp(phase, xp, fp)

    def bin_average(self, left_ns, width_ns) -> np.ndarray:
        """Mean of g2_C over histogram bins [left, left + width)."""
        offsets = (np.arange(BIN_AVERAGE_SAMPLES) + 0.5) / BIN_AVERAGE_SAMPLES * width_ns
        left = np.asarray(left_ns, dtype=float)
        return np.mean([self.at(left + o) for o in offsets], axis=0)


def background_correlation(rate1: PulseAveragedRate, rate2: PulseAveragedRate) -> BackgroundCorrelation:
    """
    g2_C(tau) = <I1(t) I2(t + tau)>_period / (mean I1 * mean I2), circular in tau.
    """
    if rate1.period_ns != rate2.period_ns or rate1.bin_ns != rate2.bin_ns:
        raise ValidationError("pulse-averaged rates are on different phase grids")
    m1, m2 = rate1.mean_rate, rate2.mean_rate
    if m1 <= 0 or m2 <= 0:
        raise AnalysisError("pulse-averaged rate has zero mean")
    spectrum = np.conj(np.fft.rfft(rate1.rate)) * np.fft.rfft(rate2.rate)
    circular = np.fft.irfft(spectrum, n=rate1.rate.size) / rate1.rate.size
    return BackgroundCorrelation(tau_ns=rate1.phase_ns.astype(float), g2=circular / (m1 * m2),
                                 period_ns=rate1.period_ns)


class BackgroundSplit(NamedTuple):
    tau_ns: np.ndarray
    total: np.ndarray
    noise: np.ndarray
    different_atom: np.ndarray


def split_background(background: BackgroundCorrelation, rates: RateSummary) -> BackgroundSplit:
    """Constant noise contribution and the remaining different-atom part."""
    floor = noise_floor(rates)
    noise = np.full(background.g2.size, floor)
    return BackgroundSplit(background.tau_ns, background.g2, noise, background.g2 - noise)


def noise_floor(rates: RateSummary) -> float:
    """g2_N = 1 - (I_P / I)^2."""
    return 1.0 - rates.photon_fraction ** 2


def photon_pair_extrema(rates: RateSummary):
    """Range of the photon-photon contribution: (0, 2 (I_P / I)^2)."""
    return 0.0, 2.0 * rates.photon_fraction ** 2


def estimator_extrema(rates: RateSummary):
    """(1 - (I_P / I)^2, 1 + (I_P / I)^2); the two always sum to 2."""
    x = rates.photon_fraction ** 2
    return 1.0 - x, 1.0 + x


class ExcessEstimate(NamedTuple):
    raw: float
    expected: float
    excess: float
    sigma: float
    g2_excess: float        # excess / sum of normalizations in the window
    g2_sigma: float


def same_atom_excess(histogram: CorrelationHistogram, background: BackgroundCorrelation,
                     center_ns: float, half_width_ns: float) -> ExcessEstimate:
    """
    Measured minus predicted pairs over bins whose centre lies within
    half_width_ns of center_ns; sigma is the Poisson error of the raw count.
    """
    centers = histogram.centers_ns
    window = np.abs(centers - center_ns) <= half_width_ns
    if not window.any():
        raise ValidationError(f"no histogram bins within {half_width_ns} ns of {center_ns} ns")
    predicted = background.bin_average(histogram.lag_ns[window], histogram.bin_width_ns)
    raw = float(histogram.raw_pairs[window].sum())
    expected = float(np.dot(histogram.normalization[window], predicted))
    weight = float(histogram.normalization[window].sum())
    sigma = float(np.sqrt(max(raw, expected)))
    return ExcessEstimate(raw, expected, raw - expected, sigma, (raw - expected) / weight, sigma / weight)
