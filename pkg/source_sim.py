#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Monte Carlo generation of detector click streams.

Atoms fall through the cavity at random (Poisson) times while the pump and
recycling lasers alternate. For every pump pulse each armed atom emits at
most one photon with the probability tabulated by cavity_dynamics; the atom
then has to be recycled before it can emit again. Photons leave through the
output coupler, pass the spatial filter, are split onto two photo diodes and
detected with the diode quantum efficiency. Dark counts are added on top.

Every cycle draws from its own random substream keyed by (seed, cycle_id),
so serial and parallel runs give identical streams.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from cavity_dynamics import CavityQedParams, EfficiencyTable, tabulate_efficiency
from errors import CalibrationError, ValidationError

logger = logging.getLogger(__name__)

EMISSION_MODES = ("single", "classical")
DEFAULT_TABLE_POINTS = 65
COUPLING_CUTOFF = 1e-3     # pulses with g < COUPLING_CUTOFF * g_max are skipped
CHUNK_CYCLES = 250         # cycles per parallel work item
THREADS_ENV = "CQED_THREADS"

CALIBRATION_TOLERANCE = 0.03
PILOT_CYCLES = 500
PILOT_SEED = 20030101
PILOT_START_RATE = 1000.0  # atoms/s for the first slope estimate


@dataclass(frozen=True)
class PulseSchedule:
    """Periodic pump/recycle grid; integer nanoseconds."""
    tau_pump_ns: int = 2000
    tau_recycle_ns: int = 2000
    pulses_per_cycle: int = 2000

    def __post_init__(self):
        if self.tau_pump_ns <= 0 or self.tau_recycle_ns <= 0:
            raise ValidationError("tau_pump_ns and tau_recycle_ns must be > 0")
        if self.pulses_per_cycle < 1:
            raise ValidationError("pulses_per_cycle must be >= 1")

    @property
    def tau_period_ns(self) -> int:
        return self.tau_pump_ns + self.tau_recycle_ns

    @property
    def cycle_window_ns(self) -> int:
        return self.pulses_per_cycle * self.tau_period_ns

    @property
    def tau_pump(self) -> float:
        return self.tau_pump_ns * 1e-9

    @property
    def tau_period(self) -> float:
        return self.tau_period_ns * 1e-9

    @property
    def cycle_window(self) -> float:
        return self.cycle_window_ns * 1e-9

    def pulse_index(self, timestamp_ns):
        """Period number of a timestamp within its cycle."""
        return np.asarray(timestamp_ns) // self.tau_period_ns

    def in_pump(self, timestamp_ns):
        """True where the timestamp falls in [k*tau_period, k*tau_period + tau_pump)."""
        return (np.asarray(timestamp_ns) % self.tau_period_ns) < self.tau_pump_ns

    def pulse_midpoints(self) -> np.ndarray:
        """Midpoint of every pump pulse in the cycle (s)."""
        k = np.arange(self.pulses_per_cycle)
        return (k * self.tau_period_ns + 0.5 * self.tau_pump_ns) * 1e-9


@dataclass(frozen=True)
class AtomFluxConfig:
    rate_lambda: float = 0.0      # atoms/s entering the mode volume
    velocity: float = 2.0         # m/s
    waist: float = 40e-6          # m
    recycle_success: float = 0.7

    def __post_init__(self):
        if self.rate_lambda < 0:
            raise ValidationError(f"rate_lambda must be >= 0, got {self.rate_lambda}")
        if self.velocity <= 0 or self.waist <= 0:
            raise ValidationError("velocity and waist must be > 0")
        if not 0.0 <= self.recycle_success <= 1.0:
            raise ValidationError(f"recycle_success must lie in [0, 1], got {self.recycle_success}")

    @property
    def transit_time(self) -> float:
        """Time during which g > g_max/e for a central transit (2w/v)."""
        return 2.0 * self.waist / self.velocity


@dataclass(frozen=True)
class DetectorModel:
    qe: float = 0.5
    path_efficiency: float = 0.72
    splitter_ratio: float = 0.5   # probability of routing to detector 1
    dark_rate: float = 446.0      # per detector, 1/s

    def __post_init__(self):
        for name in ("qe", "path_efficiency", "splitter_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.dark_rate < 0:
            raise ValidationError(f"dark_rate must be >= 0, got {self.dark_rate}")

    @property
    def overall_efficiency(self) -> float:
        """eta: diode quantum efficiency times spatial filtering."""
        return self.qe * self.path_efficiency


@dataclass(frozen=True)
class ConfigBundle:
    cavity: CavityQedParams = field(default_factory=CavityQedParams)
    schedule: PulseSchedule = field(default_factory=PulseSchedule)
    flux: AtomFluxConfig = field(default_factory=AtomFluxConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
    emission_mode: str = "single"

    def __post_init__(self):
        if self.emission_mode not in EMISSION_MODES:
            raise ValidationError(f"emission_mode must be one of {EMISSION_MODES}, got '{self.emission_mode}'")
        if abs(self.cavity.tau_pump - self.schedule.tau_pump) > 1e-12:
            raise ValidationError("cavity.tau_pump and schedule.tau_pump_ns disagree")

    def with_rate(self, rate_lambda: float) -> "ConfigBundle":
        return replace(self, flux=replace(self.flux, rate_lambda=rate_lambda))

    @property
    def detection_probability(self) -> float:
        """Probability that an emitted photon produces a click on either diode."""
        return self.cavity.escape_fraction * self.detector.overall_efficiency


@dataclass(frozen=True)
class AtomTransit:
    t_center: float        # s, closest approach to the mode centre
    impact_y: float        # m, transverse offset
    antinode_factor: float

    def coupling(self, t, g_max: float, flux: AtomFluxConfig):
        """g(t) for this atom; t in seconds from cycle start."""
        w = flux.waist
        along = np.exp(-((flux.velocity * (np.asarray(t) - self.t_center)) / w) ** 2)
        return g_max * along * np.exp(-(self.impact_y / w) ** 2) * self.antinode_factor


class ClickRecord(NamedTuple):
    cycle_id: int
    detector: int
    timestamp: int  # ns from cycle start


@dataclass
class ClickStream:
    """
    Column-oriented click records sorted by (cycle_id, timestamp).
    source_atom is only known for simulated data (-1 for dark counts).
    """
    cycle_id: np.ndarray
    detector: np.ndarray
    timestamp_ns: np.ndarray
    n_cycles: int
    schedule: PulseSchedule
    source_atom: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.timestamp_ns.size)

    def records(self):
        for c, d, t in zip(self.cycle_id.tolist(), self.detector.tolist(), self.timestamp_ns.tolist()):
            yield ClickRecord(c, d, t)

    @property
    def total_time(self) -> float:
        """Observation time in seconds, over all cycles."""
        return self.n_cycles * self.schedule.cycle_window

    def count(self, detector: int) -> int:
        return int(np.count_nonzero(self.detector == detector))

    def cycle_bounds(self) -> np.ndarray:
        """bounds[c]:bounds[c+1] slices the clicks of cycle c."""
        return np.searchsorted(self.cycle_id, np.arange(self.n_cycles + 1), side="left")

    @classmethod
    def empty(cls, n_cycles: int, schedule: PulseSchedule) -> "ClickStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int64),
                   n_cycles, schedule, np.zeros(0, np.int32))

    @classmethod
    def from_records(cls, records, n_cycles: int, schedule: PulseSchedule) -> "ClickStream":
        rows = sorted(records, key=lambda r: (r[0], r[2], r[1]))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].astype(np.int8), arr[:, 2].copy(), n_cycles, schedule)


@dataclass
class CycleTruth:
    """Ground truth of one cycle: transits and per-(pulse, atom) emission counts."""
    cycle_id: int
    transits: list
    pulse_index: np.ndarray
    atom_id: np.ndarray
    emitted: np.ndarray

    def emission_lookup(self) -> dict:
        return {(int(a), int(k)): int(e) for a, k, e in zip(self.atom_id, self.pulse_index, self.emitted)}


@dataclass
class SimOutput:
    clicks: ClickStream
    truth: list
    config: ConfigBundle
    seed: int


def sample_atom_transits(flux: AtomFluxConfig, schedule: PulseSchedule, rng) -> list:
    """
    Poissonian atom number over the cycle window, centre times uniform,
    impact parameter Gaussian (sigma = w/2, truncated at 2w), antinode factor
    |cos u| with u uniform on [0, pi). Sorted by t_center.
    """
    window = schedule.cycle_window
    n_atoms = rng.poisson(flux.rate_lambda * window)
    if n_atoms == 0:
        return []
    t_center = rng.uniform(0.0, window, n_atoms)
    impact = rng.normal(0.0, 0.5 * flux.waist, n_atoms)
    outside = np.abs(impact) > 2.0 * flux.waist
    while outside.any():
        impact[outside] = rng.normal(0.0, 0.5 * flux.waist, int(outside.sum()))
        outside = np.abs(impact) > 2.0 * flux.waist
    antinode = np.abs(np.cos(rng.uniform(0.0, np.pi, n_atoms)))

    order = np.argsort(t_center, kind="stable")
    return [AtomTransit(float(t_center[i]), float(impact[i]), float(antinode[i])) for i in order]


def _pulse_range(transit: AtomTransit, schedule: PulseSchedule, flux: AtomFluxConfig):
    """Pump pulses during which the atom's coupling is above the cutoff."""
    reach = flux.waist / flux.velocity * np.sqrt(np.log(1.0 / COUPLING_CUTOFF))
    offset = 0.5 * schedule.tau_pump
    k_lo = max(int(np.ceil((transit.t_center - reach - offset) / schedule.tau_period)), 0)
    k_hi = min(int(np.floor((transit.t_center + reach - offset) / schedule.tau_period)),
               schedule.pulses_per_cycle - 1)
    return np.arange(k_lo, k_hi + 1)


def _emit_single(probabilities: np.ndarray, recycle_success: float, rng) -> np.ndarray:
    """One atom, successive pump pulses: at most one photon per pulse, recycle before re-emission."""
    u_emit = rng.random(probabilities.size)
    u_recycle = rng.random(probabilities.size)
    emitted = np.zeros(probabilities.size, dtype=np.int32)
    armed = True
    for j in range(probabilities.size):
        if armed and u_emit[j] < probabilities[j]:
            emitted[j] = 1
            armed = False
        # recycling interval after pump pulse j
        if not armed and u_recycle[j] < recycle_success:
            armed = True
    return emitted


def simulate_cycle(schedule: PulseSchedule, flux: AtomFluxConfig, detector: DetectorModel,
                   efficiency_table: EfficiencyTable, rng, cycle_id: int = 0,
                   escape_fraction: float = 0.9, emission_mode: str = "single",
                   transits: Optional[list] = None):
    """
    Simulate one experimental cycle.

    Returns (clicks, truth): clicks is a ClickStream of this single cycle
    (cycle_id set, n_cycles=1), truth a CycleTruth. Passing `transits`
    freezes the atom trajectories instead of sampling them.
    """
    if emission_mode not in EMISSION_MODES:
        raise ValidationError(f"unknown emission_mode '{emission_mode}'")
    if transits is None:
        transits = sample_atom_transits(flux, schedule, rng)

    midpoints = schedule.pulse_midpoints()
    g_max = efficiency_table.g_max
    p_detect = escape_fraction * detector.overall_efficiency

    truth_pulses, truth_atoms, truth_emitted = [], [], []
    photon_t, photon_det, photon_atom = [], [], []

    for atom_id, transit in enumerate(transits):
        pulses = _pulse_range(transit, schedule, flux)
        if pulses.size == 0:
            continue
        g_eff = np.clip(transit.coupling(midpoints[pulses], g_max, flux), 0.0, g_max)
        probabilities = efficiency_table.probability(g_eff)

        if emission_mode == "single":
            emitted = _emit_single(probabilities, flux.recycle_success, rng)
        else:
            emitted = rng.poisson(probabilities).astype(np.int32)

        truth_pulses.append(pulses)
        truth_atoms.append(np.full(pulses.size, atom_id, dtype=np.int32))
        truth_emitted.append(emitted)

        n_photons = int(emitted.sum())
        if n_photons == 0:
            continue
        which = np.repeat(np.arange(pulses.size), emitted)
        detected = rng.random(n_photons) < p_detect
        route = np.where(rng.random(n_photons) < detector.splitter_ratio, 1, 2)
        t_in_pulse = efficiency_table.sample_emission_times(g_eff[which], rng.random(n_photons))
        if not detected.any():
            continue
        start_ns = pulses[which] * schedule.tau_period_ns
        t_ns = start_ns + np.minimum(np.floor(t_in_pulse * 1e9), schedule.tau_pump_ns - 1)
        photon_t.append(t_ns[detected].astype(np.int64))
        photon_det.append(route[detected])
        photon_atom.append(np.full(int(detected.sum()), atom_id, dtype=np.int32))

    # dark counts: two independent homogeneous Poisson streams over the whole cycle
    for det in (1, 2):
        n_dark = rng.poisson(detector.dark_rate * schedule.cycle_window)
        if n_dark:
            photon_t.append(rng.integers(0, schedule.cycle_window_ns, n_dark, dtype=np.int64))
            photon_det.append(np.full(n_dark, det))
            photon_atom.append(np.full(n_dark, -1, dtype=np.int32))

    if photon_t:
        ts = np.concatenate(photon_t)
        det = np.concatenate(photon_det).astype(np.int8)
        src = np.concatenate(photon_atom)
        order = np.lexsort((det, ts))
        ts, det, src = ts[order], det[order], src[order]
    else:
        ts, det, src = np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int32)

    clicks = ClickStream(np.full(ts.size, cycle_id, dtype=np.int64), det, ts, 1, schedule, src)
    truth = CycleTruth(
        cycle_id=cycle_id,
        transits=list(transits),
        pulse_index=np.concatenate(truth_pulses) if truth_pulses else np.zeros(0, np.int64),
        atom_id=np.concatenate(truth_atoms) if truth_atoms else np.zeros(0, np.int32),
        emitted=np.concatenate(truth_emitted) if truth_emitted else np.zeros(0, np.int32),
    )
    return clicks, truth


def cycle_rng(seed: int, cycle_id: int):
    """Independent random substream for one cycle."""
    return np.random.default_rng(np.random.SeedSequence([seed, cycle_id]))


def _simulate_chunk(bundle: ConfigBundle, table: EfficiencyTable, seed: int, cycle_ids):
    results = []
    for cycle_id in cycle_ids:
        results.append(simulate_cycle(
            bundle.schedule, bundle.flux, bundle.detector, table, cycle_rng(seed, cycle_id),
            cycle_id=cycle_id, escape_fraction=bundle.cavity.escape_fraction,
            emission_mode=bundle.emission_mode))
    return results


def worker_count(requested: Optional[int] = None) -> int:
    """Requested workers (default: CPU count), capped by CQED_THREADS."""
    workers = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            workers = min(workers, max(int(cap), 1))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={cap!r}")
    return max(workers, 1)


def run_experiment(bundle: ConfigBundle, n_cycles: int, seed: int,
                   table: Optional[EfficiencyTable] = None, workers: Optional[int] = 1,
                   progress: bool = False) -> SimOutput:
    """
    Simulate n_cycles independent cycles. Output depends only on (bundle,
    n_cycles, seed), never on the number of workers.
    """
    if n_cycles < 1:
        raise ValidationError(f"n_cycles must be >= 1, got {n_cycles}")
    if seed < 0:
        raise ValidationError(f"seed must be >= 0, got {seed}")
    if table is None:
        table = tabulate_efficiency(bundle.cavity, DEFAULT_TABLE_POINTS)

    n_workers = worker_count(workers)
    chunks = [range(start, min(start + CHUNK_CYCLES, n_cycles))
              for start in range(0, n_cycles, CHUNK_CYCLES)]
    logger.info(f"Simulating {n_cycles} cycles (lambda={bundle.flux.rate_lambda:.1f} atoms/s, "
                f"mode={bundle.emission_mode}, seed={seed}, workers={n_workers})")

    jobs = (delayed(_simulate_chunk)(bundle, table, seed, chunk) for chunk in chunks)
    if n_workers > 1:
        chunk_results = Parallel(n_jobs=n_workers)(tqdm(jobs, total=len(chunks), desc="Cycles",
                                                        disable=not progress))
    else:
        chunk_results = [fn(*args, **kwargs) for fn, args, kwargs in
                         tqdm(jobs, total=len(chunks), desc="Cycles", disable=not progress)]

    per_cycle = [item for chunk in chunk_results for item in chunk]
    clicks = ClickStream(
        cycle_id=np.concatenate([c.cycle_id for c, _ in per_cycle]),
        detector=np.concatenate([c.detector for c, _ in per_cycle]),
        timestamp_ns=np.concatenate([c.timestamp_ns for c, _ in per_cycle]),
        n_cycles=n_cycles,
        schedule=bundle.schedule,
        source_atom=np.concatenate([c.source_atom for c, _ in per_cycle]),
    )
    truth = [t for _, t in per_cycle]
    logger.info(f"Simulated {len(clicks)} clicks "
                f"({int(np.count_nonzero(clicks.source_atom >= 0))} from atoms)")
    return SimOutput(clicks=clicks, truth=truth, config=bundle, seed=seed)


def photon_rate(output: SimOutput) -> float:
    """Mean atom-photon click rate per detector (1/s), from click provenance."""
    n_photon_clicks = int(np.count_nonzero(output.clicks.source_atom >= 0))
    return n_photon_clicks / (2.0 * output.clicks.total_time)


def saturation_rate(bundle: ConfigBundle) -> float:
    """Per-detector photon rate if every pump pulse delivered exactly one photon."""
    return 0.5 * bundle.detection_probability / bundle.schedule.tau_period


def calibrate_flux(target_photon_rate: float, bundle: ConfigBundle,
                   table: Optional[EfficiencyTable] = None,
                   pilot_cycles: int = PILOT_CYCLES, seed: int = PILOT_SEED,
                   tolerance: float = CALIBRATION_TOLERANCE, max_iterations: int = 40,
                   progress: bool = False) -> float:
    """
    Atom rate lambda whose simulated photon rate per detector (I_P) lies
    within `tolerance` of the target, by bisection on short pilot runs.
    """
    if target_photon_rate < 0:
        raise ValidationError("target photon rate must be >= 0")
    if target_photon_rate == 0:
        return 0.0
    ceiling = saturation_rate(bundle)
    if target_photon_rate >= ceiling:
        raise CalibrationError(f"target {target_photon_rate:.1f} 1/s exceeds saturation "
                               f"({ceiling:.1f} 1/s: one photon in every pump pulse)")
    if table is None:
        table = tabulate_efficiency(bundle.cavity, DEFAULT_TABLE_POINTS)

    def pilot(rate_lambda: float) -> float:
        output = run_experiment(bundle.with_rate(rate_lambda), pilot_cycles, seed, table=table)
        return photon_rate(output)

    first = pilot(PILOT_START_RATE)
    if first <= 0:
        raise CalibrationError("pilot run produced no photons; check coupling and efficiencies")
    estimate = PILOT_START_RATE * target_photon_rate / first
    low, high = 0.0, 2.0 * estimate
    while pilot(high) < target_photon_rate:
        low, high = high, 2.0 * high
        if high > 1e4 * estimate:
            raise CalibrationError(f"could not bracket target {target_photon_rate:.1f} 1/s")

    rate_lambda = estimate
    for iteration in tqdm(range(max_iterations), desc="Calibrating", disable=not progress):
        achieved = pilot(rate_lambda)
        logger.info(f"Calibration step {iteration}: lambda={rate_lambda:.2f} -> I_P={achieved:.1f} 1/s")
        if abs(achieved - target_photon_rate) <= tolerance * target_photon_rate:
            return rate_lambda
        if achieved < target_photon_rate:
            low = rate_lambda
        else:
            high = rate_lambda
        rate_lambda = 0.5 * (low + high)
    raise CalibrationError(f"no convergence to {target_photon_rate:.1f} 1/s "
                           f"after {max_iterations} pilot runs")


def max_consecutive_emissions(truth: list) -> np.ndarray:
    """Longest run of emissions in successive pump pulses, one entry per atom."""
    runs = []
    for cycle in truth:
        for atom_id in np.unique(cycle.atom_id):
            mask = cycle.atom_id == atom_id
            pulses = cycle.pulse_index[mask]
            flags = cycle.emitted[mask] > 0
            best = current = 0
            previous = None
            for k, flag in zip(pulses.tolist(), flags.tolist()):
                if flag and previous is not None and k == previous + 1 and current > 0:
                    current += 1
                elif flag:
                    current = 1
                else:
                    current = 0
                previous = k
                best = max(best, current)
            runs.append(best)
    return np.array(runs, dtype=int)


def expected_conditional_emission(output: SimOutput, delta_k_range: int):
    """
    Ground-truth counterpart of the conditional emission probabilities:
    for pump pulses k with at least one click (not the last pulse of a
    cycle), take the atoms whose photons were detected in k and average the
    number of photons they send through the output coupler in pulse k+dk.

    Returns (delta_k, mean, standard error); dk = 0 is NaN.
    """
    schedule = output.clicks.schedule
    escape = output.config.cavity.escape_fraction
    deltas = np.arange(-delta_k_range, delta_k_range + 1)
    samples = {int(d): [] for d in deltas if d != 0}

    clicks = output.clicks
    bounds = clicks.cycle_bounds()
    for cycle in output.truth:
        c = cycle.cycle_id
        ts = clicks.timestamp_ns[bounds[c]:bounds[c + 1]]
        src = clicks.source_atom[bounds[c]:bounds[c + 1]]
        pump = schedule.in_pump(ts)
        if not pump.any():
            continue
        pulse = schedule.pulse_index(ts[pump])
        src = src[pump]
        lookup = cycle.emission_lookup()
        for k in np.unique(pulse):
            if k == schedule.pulses_per_cycle - 1:
                continue
            atoms = np.unique(src[(pulse == k) & (src >= 0)])
            if atoms.size == 0:
                continue
            for d in samples:
                target = int(k) + d
                if 0 <= target < schedule.pulses_per_cycle:
                    samples[d].append(escape * sum(lookup.get((int(a), target), 0) for a in atoms))

    mean = np.full(deltas.size, np.nan)
    sem = np.full(deltas.size, np.nan)
    for i, d in enumerate(deltas):
        values = samples.get(int(d))
        if values:
            arr = np.asarray(values, dtype=float)
            mean[i] = arr.mean()
            sem[i] = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else np.nan
    return deltas, mean, sem
