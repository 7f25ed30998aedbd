#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Atom-presence conditioning.

A click during a pump pulse k signals (with probability p_atom) that an
atom is in the cavity. The pulse after each such trigger is used for the
conditional pulse-to-pulse correlation g2(di), and the pulses k+dk for the
background-corrected emission probabilities p(dk). Recycle-interval clicks
never enter, and no index ever crosses a cycle boundary.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from click_stats import PulseAveragedRate, pulse_averaged_rate
from errors import AnalysisError, ValidationError
from source_sim import ClickStream

logger = logging.getLogger(__name__)

DEFAULT_ETA = 0.36          # diode quantum efficiency x spatial filtering
DEFAULT_DELTA_RANGE = 10


@dataclass
class PulseCounts:
    """
    Per-pump-pulse click counts, stored sparsely: `index` lists the global
    pulse numbers (cycle * pulses_per_cycle + k) that hold any click.
    """
    index: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    n_cycles: int
    pulses_per_cycle: int

    @property
    def n(self) -> np.ndarray:
        return self.n1 + self.n2

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def counts_at(self, pulses):
        """(n1, n2) at arbitrary global pulse indices; zero where nothing was recorded."""
        pulses = np.asarray(pulses, dtype=np.int64)
        if self.index.size == 0:
            return np.zeros(pulses.shape, dtype=np.int64), np.zeros(pulses.shape, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.index, pulses), self.index.size - 1)
        hit = self.index[pos] == pulses
        return np.where(hit, self.n1[pos], 0), np.where(hit, self.n2[pos], 0)

    def dense(self) -> np.ndarray:
        """Full (n_pulses, 2) array; only sensible for small inputs."""
        out = np.zeros((self.n_cycles * self.pulses_per_cycle, 2), dtype=np.int64)
        out[self.index, 0] = self.n1
        out[self.index, 1] = self.n2
        return out

    @classmethod
    def from_dense(cls, n1, n2, pulses_per_cycle: int) -> "PulseCounts":
        n1 = np.asarray(n1, dtype=np.int64)
        n2 = np.asarray(n2, dtype=np.int64)
        if n1.shape != n2.shape or n1.size % pulses_per_cycle:
            raise ValidationError("dense counts must cover whole cycles")
        index = np.flatnonzero((n1 + n2) > 0)
        return cls(index, n1[index], n2[index], n1.size // pulses_per_cycle, pulses_per_cycle)


def bin_clicks_to_pulses(clicks: ClickStream) -> PulseCounts:
    """Assign pump-window clicks to their pump pulse; recycle-window clicks are dropped."""
    schedule = clicks.schedule
    pump = schedule.in_pump(clicks.timestamp_ns)
    global_index = (clicks.cycle_id[pump] * schedule.pulses_per_cycle
                    + schedule.pulse_index(clicks.timestamp_ns[pump]))
    detector = clicks.detector[pump]

    index, inverse = np.unique(global_index, return_inverse=True)
    n1 = np.bincount(inverse, weights=(detector == 1), minlength=index.size).astype(np.int64)
    n2 = np.bincount(inverse, weights=(detector == 2), minlength=index.size).astype(np.int64)
    logger.info(f"{int(pump.sum())} of {len(clicks)} clicks fall in pump windows "
                f"({index.size} pulses with counts)")
    return PulseCounts(index.astype(np.int64), n1, n2, clicks.n_cycles, schedule.pulses_per_cycle)


def atom_presence_probability(n_bar_p: float, n_bar_n: float) -> float:
    """p_atom = n_P / (n_P + n_N)."""
    if n_bar_p < 0 or n_bar_n < 0:
        raise ValidationError("mean counts per pulse must be >= 0")
    if n_bar_p + n_bar_n <= 0:
        raise AnalysisError("no counts at all: atom presence probability undefined")
    return n_bar_p / (n_bar_p + n_bar_n)


def mean_counts_per_pulse(pulse_avg: PulseAveragedRate, i_noise: float, tau_pump: float):
    """
    (n_P, n_N) per pump pulse summed over both detectors:
    n_N = 2 I_N tau_P and n_P = 2 * integral over the pump window of (I(t) - I_N).
    """
    if i_noise < 0:
        raise ValidationError("noise rate must be >= 0")
    bin_s = pulse_avg.bin_ns * 1e-9
    n_pump_bins = int(round(tau_pump / bin_s))
    if n_pump_bins < 1 or n_pump_bins > pulse_avg.rate.size or abs(n_pump_bins * bin_s - tau_pump) > 1e-12:
        raise ValidationError(f"phase grid of {pulse_avg.bin_ns} ns does not cover the pump window exactly")

    n_bar_n = 2.0 * i_noise * tau_pump
    n_bar_p = 2.0 * float(np.sum(pulse_avg.rate[:n_pump_bins] - i_noise)) * bin_s
    if n_bar_p < 0:
        logger.warning(f"Estimated photon counts per pulse negative ({n_bar_p:.3e}); clamping to 0")
        n_bar_p = 0.0
    return n_bar_p, n_bar_n


@dataclass(frozen=True)
class ConditioningStats:
    n_bar_p: float
    n_bar_n: float
    p_atom: float
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if not 0.0 <= self.p_atom <= 1.0:
            raise ValidationError(f"p_atom must lie in [0, 1], got {self.p_atom}")
        if self.n_bar_n < 0 or self.n_bar_p < 0:
            raise ValidationError("mean counts per pulse must be >= 0")

    @classmethod
    def from_counts(cls, n_bar_p: float, n_bar_n: float, eta: float = DEFAULT_ETA) -> "ConditioningStats":
        return cls(n_bar_p, n_bar_n, atom_presence_probability(n_bar_p, n_bar_n), eta)


def conditioning_stats(clicks: ClickStream, i_noise: float, eta: float = DEFAULT_ETA) -> ConditioningStats:
    """n_P, n_N and p_atom estimated from the stream's pulse-averaged rate."""
    pulse_avg = pulse_averaged_rate(clicks)
    n_bar_p, n_bar_n = mean_counts_per_pulse(pulse_avg, i_noise, clicks.schedule.tau_pump)
    stats = ConditioningStats.from_counts(n_bar_p, n_bar_n, eta)
    logger.info(f"n_P={stats.n_bar_p:.4e} n_N={stats.n_bar_n:.4e} p_atom={stats.p_atom:.3f}")
    return stats


@dataclass
class SelectedSeries:
    """Trigger pulses k_i (global index) and the counts of the pulse after each."""
    trigger_index: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    cycle: np.ndarray
    pulses_per_cycle: int

    @property
    def size(self) -> int:
        return int(self.trigger_index.size)


def select_triggered(pulses: PulseCounts) -> SelectedSeries:
    """
    Every pump pulse with n > 0 is a trigger, except the last pulse of a
    cycle. A follow-up pulse may itself be the next trigger.
    """
    ppc = pulses.pulses_per_cycle
    keep = (pulses.n > 0) & ((pulses.index % ppc) != ppc - 1)
    triggers = pulses.index[keep]
    m1, m2 = pulses.counts_at(triggers + 1)
    return SelectedSeries(triggers, m1.astype(np.int64), m2.astype(np.int64), triggers // ppc, ppc)


def g2_error_bars(g2, n_events):
    """
    Shot-noise errors sigma = g2 / sqrt(n_e). Returns (sigma, defined);
    sigma is NaN and defined False where n_e = 0.
    """
    g2 = np.asarray(g2, dtype=float)
    n_events = np.asarray(n_events, dtype=float)
    if np.any(n_events < 0):
        raise ValidationError("event counts must be >= 0")
    defined = n_events > 0
    sigma = np.full(np.broadcast(g2, n_events).shape, np.nan)
    np.divide(g2, np.sqrt(n_events), out=sigma, where=defined)
    return sigma, defined


class OffPeakSummary(NamedTuple):
    g2_mean: float
    n_events_mean: float
    sigma: float


@dataclass
class ConditionalG2:
    delta_i: np.ndarray
    g2: np.ndarray
    n_events: np.ndarray
    n_valid: np.ndarray
    sigma: np.ndarray
    defined: np.ndarray
    m1_mean: float
    m2_mean: float
    n_triggers: int

    def at(self, delta: int) -> float:
        return float(self.g2[np.flatnonzero(self.delta_i == delta)[0]])

    def off_peak_summary(self) -> OffPeakSummary:
        """Mean g2 and mean event count over di != 0, error g2_mean / sqrt(n_e mean)."""
        off = self.delta_i != 0
        if not off.any():
            raise AnalysisError("no off-peak values in range")
        g2_mean = float(self.g2[off].mean())
        n_mean = float(self.n_events[off].mean())
        sigma = g2_mean / np.sqrt(n_mean) if n_mean > 0 else float("nan")
        return OffPeakSummary(g2_mean, n_mean, sigma)


def _aligned(series: SelectedSeries, delta: int):
    """Index pairs (i, i + delta) inside [0, M) and inside the same cycle."""
    m = series.size
    i = np.arange(max(0, -delta), m - max(0, delta))
    j = i + delta
    same = series.cycle[i] == series.cycle[j]
    return i[same], j[same]


def conditional_g2(series: SelectedSeries, delta_range: int = DEFAULT_DELTA_RANGE) -> ConditionalG2:
    """
    g2(di) = sum m1(i) m2(i + di) / (N_valid * mean(m1) * mean(m2)), the sum
    running over the N_valid pairs inside the series and inside one cycle.
    """
    if delta_range < 0:
        raise ValidationError("delta range must be >= 0")
    if series.size == 0:
        raise AnalysisError("no trigger events selected")
    m1_mean = float(series.m1.mean())
    m2_mean = float(series.m2.mean())
    if m1_mean * m2_mean == 0:
        raise AnalysisError("no follow-up photons on one of the detectors")

    deltas = np.arange(-delta_range, delta_range + 1)
    n_events = np.zeros(deltas.size)
    n_valid = np.zeros(deltas.size, dtype=np.int64)
    for idx, d in enumerate(deltas):
        i, j = _aligned(series, int(d))
        n_valid[idx] = i.size
        n_events[idx] = float(np.dot(series.m1[i], series.m2[j]))

    g2 = np.zeros(deltas.size)
    np.divide(n_events, n_valid * m1_mean * m2_mean, out=g2, where=n_valid > 0)
    sigma, defined = g2_error_bars(g2, n_events)
    logger.info(f"Conditional g2 from {series.size} triggers: g2(0)={g2[delta_range]:.3f} "
                f"({int(n_events[delta_range])} events)")
    return ConditionalG2(deltas, g2, n_events, n_valid, sigma, defined, m1_mean, m2_mean, series.size)


@dataclass
class EmissionProbabilities:
    delta_k: np.ndarray
    p_bar: np.ndarray
    sigma: np.ndarray
    n_valid: np.ndarray


def conditional_emission_probability(pulses: PulseCounts, series: SelectedSeries,
                                     stats: ConditioningStats,
                                     delta_k_range: int = DEFAULT_DELTA_RANGE) -> EmissionProbabilities:
    """
    p(dk) = 1/(eta p_atom) * mean over triggers of [n(k_i + dk) - n_N - n_P - [dk == 0]],
    skipping k_i + dk outside the trigger's cycle. Not clamped: noise-only
    data scatters around zero.
    """
    if stats.eta <= 0:
        raise ValidationError("eta must be > 0")
    if stats.p_atom <= 0:
        raise AnalysisError("p_atom is zero: no atom signal to condition on")
    if series.size == 0:
        raise AnalysisError("no trigger events selected")
    if delta_k_range < 0:
        raise ValidationError("delta range must be >= 0")

    ppc = series.pulses_per_cycle
    scale = 1.0 / (stats.eta * stats.p_atom)
    deltas = np.arange(-delta_k_range, delta_k_range + 1)
    p_bar = np.full(deltas.size, np.nan)
    sigma = np.full(deltas.size, np.nan)
    n_valid = np.zeros(deltas.size, dtype=np.int64)
    position = series.trigger_index % ppc

    for idx, d in enumerate(deltas):
        valid = (position + d >= 0) & (position + d < ppc)
        n_valid[idx] = int(valid.sum())
        if not n_valid[idx]:
            continue
        n1, n2 = pulses.counts_at(series.trigger_index[valid] + d)
        terms = (n1 + n2) - stats.n_bar_n - stats.n_bar_p - (1.0 if d == 0 else 0.0)
        p_bar[idx] = scale * terms.mean()
        if terms.size > 1:
            sigma[idx] = scale * terms.std(ddof=1) / np.sqrt(terms.size)
    return EmissionProbabilities(deltas, p_bar, sigma, n_valid)
