#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Atom-cavity master equation for one pump pulse.

The coupled system lives in {|u,0>, |e,0>, |g,1>, |g,0>}; a fifth "sink"
level collects population lost by spontaneous emission from |e,0>, which
decays at the total rate gamma_perp. The pump Rabi frequency ramps linearly
from 0 to omega_max over tau_pump and is cut off hard at the end of the pulse.

Internally everything is integrated in microseconds (rates in rad/us), the
same normalisation trick the dispersive-regime solvers use to keep the step
control well conditioned.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from tqdm import tqdm

from errors import IntegrationError, ValidationError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

# Basis indices; SINK is outside the four-state manifold
U0, E0, G1, G0, SINK = range(5)
DIM = 5
BASIS_LABELS = ("|u,0>", "|e,0>", "|g,1>", "|g,0>")

US = 1e-6  # seconds per microsecond

INTEGRATOR_METHOD = "DOP853"
INTEGRATOR_ATOL = 1e-10
INTEGRATOR_RTOL = 1e-9
REFERENCE_STEP = 1e-10  # 0.1 ns fixed step for the brute-force oracle
PROFILE_POINTS = 401

TRACE_TOL = 1e-8
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = -1e-8


@dataclass(frozen=True)
class CavityQedParams:
    """Rates in rad/s, durations in s."""
    g_max: float = TWO_PI * 2.5e6
    kappa: float = TWO_PI * 1.25e6
    gamma_perp: float = TWO_PI * 3.0e6
    delta: float = -TWO_PI * 20.0e6
    omega_max: float = TWO_PI * 8.0e6
    tau_pump: float = 2e-6
    escape_fraction: float = 0.9

    def __post_init__(self):
        for name in ("g_max", "kappa", "gamma_perp", "omega_max", "tau_pump"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.tau_pump == 0:
            raise ValidationError("tau_pump must be > 0")
        if not 0.0 <= self.escape_fraction <= 1.0:
            raise ValidationError(f"escape_fraction must lie in [0, 1], got {self.escape_fraction}")

    def omega(self, t: float) -> float:
        """Pump Rabi frequency at time t inside the pulse (linear ramp)."""
        return self.omega_max * t / self.tau_pump


@dataclass(frozen=True)
class DensityMatrix:
    """4x4 state over BASIS_LABELS plus the sink population."""
    entries: np.ndarray
    sink: float = 0.0

    @classmethod
    def from_full(cls, rho: np.ndarray) -> "DensityMatrix":
        return cls(entries=rho[:SINK, :SINK].copy(), sink=float(rho[SINK, SINK].real))

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.entries))

    def trace(self) -> float:
        return float(np.real(np.trace(self.entries))) + self.sink

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        hermitian = 0.5 * (self.entries + self.entries.conj().T)
        return float(min(np.linalg.eigvalsh(hermitian).min(), self.sink))


@dataclass(frozen=True)
class EmissionProfile:
    """
    Photon escape rate 2*kappa*rho_{g1,g1}(t) on a grid over [0, tau_pump].
    cumulative[i] is the escape probability accumulated up to time_grid[i];
    it is non-decreasing and ends at total_probability.
    """
    time_grid: np.ndarray
    rate: np.ndarray
    cumulative: np.ndarray
    total_probability: float

    def cdf(self) -> np.ndarray:
        """Normalised cumulative emission curve (all zeros if nothing is emitted)."""
        if self.total_probability <= 0:
            return np.zeros_like(self.cumulative)
        return self.cumulative / self.total_probability

    def sample_times(self, uniforms) -> np.ndarray:
        """Emission times (s) for uniforms in [0, 1), by inverse CDF."""
        if self.total_probability <= 0:
            raise ValidationError("profile emits no photons; cannot sample emission times")
        return np.interp(np.asarray(uniforms, dtype=float), self.cdf(), self.time_grid)


def _ket_bra(a: int, b: int) -> np.ndarray:
    op = np.zeros((DIM, DIM), dtype=complex)
    op[a, b] = 1.0
    return op


def _commutator_super(h: np.ndarray) -> np.ndarray:
    # row-major vec: vec(A rho B) = (A kron B^T) vec(rho)
    eye = np.eye(DIM)
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_super(c: np.ndarray, rate: float) -> np.ndarray:
    eye = np.eye(DIM)
    cdc = c.conj().T @ c
    return rate * (np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T)))


def _generator_parts(params: CavityQedParams, g_eff: float):
    """
    Split the Liouvillian (in 1/us) into a static part and the pump part, so
    that L(t) = static + (t / tau_pump) * pump.
    """
    h_static = params.delta * US * _ket_bra(E0, E0)
    h_static += g_eff * US * (_ket_bra(E0, G1) + _ket_bra(G1, E0))
    h_pump = 0.5 * params.omega_max * US * (_ket_bra(U0, E0) + _ket_bra(E0, U0))

    static = _commutator_super(h_static)
    static += _dissipator_super(_ket_bra(G0, G1), 2.0 * params.kappa * US)
    static += _dissipator_super(_ket_bra(SINK, E0), params.gamma_perp * US)
    return static, _commutator_super(h_pump)


def _check_coupling(g_eff: float):
    if g_eff < 0 or not np.isfinite(g_eff):
        raise ValidationError(f"g_eff must be a finite value >= 0, got {g_eff}")


def build_generator(params: CavityQedParams, g_eff: float, t: float) -> np.ndarray:
    """
    Instantaneous Liouvillian at time t (s) as a 25x25 superoperator in 1/s,
    acting on the row-major flattened 5x5 density matrix (four states + sink).
    """
    _check_coupling(g_eff)
    if t < 0 or t > params.tau_pump:
        raise ValidationError(f"t={t} s lies outside the pump pulse [0, {params.tau_pump}]")
    static, pump = _generator_parts(params, g_eff)
    return (static + (t / params.tau_pump) * pump) / US


def _initial_state() -> np.ndarray:
    return _ket_bra(U0, U0)


def _check_state(rho: np.ndarray, t: float):
    state = DensityMatrix.from_full(rho)
    full_trace = float(np.real(np.trace(rho)))
    if abs(full_trace - 1.0) > TRACE_TOL:
        raise IntegrationError(f"trace drifted to {full_trace:.12f} at t={t:.3e} s")
    if state.hermiticity_error() > HERMITICITY_TOL:
        raise IntegrationError(f"density matrix lost hermiticity at t={t:.3e} s")
    if state.min_eigenvalue() < POSITIVITY_TOL:
        raise IntegrationError(f"negative eigenvalue {state.min_eigenvalue():.3e} at t={t:.3e} s")


def _profile_from_states(params: CavityQedParams, times_us: np.ndarray, rhos: np.ndarray):
    for t_us, rho in zip(times_us, rhos):
        _check_state(rho, t_us * US)
    rate = 2.0 * params.kappa * np.clip(np.real(rhos[:, G1, G1]), 0.0, None)
    # every jump into |g,0> is a photon leaving the cavity
    cumulative = np.maximum.accumulate(np.clip(np.real(rhos[:, G0, G0]), 0.0, 1.0))
    profile = EmissionProfile(
        time_grid=times_us * US,
        rate=rate,
        cumulative=cumulative,
        total_probability=float(cumulative[-1]),
    )
    return profile, DensityMatrix.from_full(rhos[-1])


def evolve_pump_pulse(params: CavityQedParams, g_eff: float,
                      n_points: int = PROFILE_POINTS,
                      atol: float = INTEGRATOR_ATOL, rtol: float = INTEGRATOR_RTOL):
    """
    Integrate one pump pulse starting from the pure state |u,0>.
    Returns (EmissionProfile, final DensityMatrix).
    """
    _check_coupling(g_eff)
    static, pump = _generator_parts(params, g_eff)
    tau_us = params.tau_pump / US

    def rhs(t_us, y):
        return (static + (t_us / tau_us) * pump) @ y

    times_us = np.linspace(0.0, tau_us, n_points)
    sol = solve_ivp(rhs, (0.0, tau_us), _initial_state().flatten(),
                    method=INTEGRATOR_METHOD, t_eval=times_us, atol=atol, rtol=rtol)
    if not sol.success:
        raise IntegrationError(f"pump pulse integration failed at g_eff={g_eff:.4e}: {sol.message}")

    rhos = sol.y.T.reshape(-1, DIM, DIM)
    return _profile_from_states(params, times_us, rhos)


def evolve_fixed_step(params: CavityQedParams, g_eff: float, dt: float = REFERENCE_STEP,
                      n_points: int = PROFILE_POINTS):
    """
    Brute-force classic RK4 with a fixed step; reference oracle for the
    adaptive solver. dt must divide the output spacing into whole steps.
    """
    _check_coupling(g_eff)
    static, pump = _generator_parts(params, g_eff)
    tau_us = params.tau_pump / US
    n_steps = int(round(params.tau_pump / dt))
    stride = (n_steps // (n_points - 1)) or 1
    n_steps = stride * (n_points - 1)
    h = tau_us / n_steps

    def rhs(t_us, y):
        return (static + (t_us / tau_us) * pump) @ y

    y = _initial_state().flatten()
    times_us = [0.0]
    states = [y.copy()]
    for step in range(n_steps):
        t = step * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (step + 1) % stride == 0:
            times_us.append((step + 1) * h)
            states.append(y.copy())

    rhos = np.array(states).reshape(-1, DIM, DIM)
    return _profile_from_states(params, np.array(times_us), rhos)


def emission_probability(params: CavityQedParams, g_eff: float) -> float:
    """Photon escape probability for one pulse at fixed coupling g_eff."""
    profile, _ = evolve_pump_pulse(params, g_eff)
    return profile.total_probability


@dataclass(frozen=True)
class EfficiencyTable:
    """
    Emission probability and normalised emission-time CDF tabulated over
    g_eff in [0, g_max]. Immutable; shared read-only by simulation workers.
    """
    g_grid: np.ndarray
    probabilities: np.ndarray
    profiles: tuple
    escape_fraction: float
    time_grid: np.ndarray = field(init=False)
    cdfs: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "time_grid", self.profiles[-1].time_grid)
        cdfs = np.array([p.cdf() for p in self.profiles])
        # grid points that never emit borrow the shape of the nearest emitting point
        emitting = np.flatnonzero(self.probabilities > 0)
        if emitting.size:
            for i in np.flatnonzero(self.probabilities <= 0):
                cdfs[i] = cdfs[emitting[np.argmin(np.abs(emitting - i))]]
        object.__setattr__(self, "cdfs", cdfs)

    @property
    def g_max(self) -> float:
        return float(self.g_grid[-1])

    def probability(self, g_eff):
        """Linear interpolation of the raw (into-cavity-mode) emission probability."""
        return np.interp(g_eff, self.g_grid, self.probabilities)

    def escape_weighted(self, g_eff):
        """Probability that the photon leaves through the output coupler."""
        return self.escape_fraction * self.probability(g_eff)

    def sample_emission_times(self, g_eff, uniforms) -> np.ndarray:
        """
        Emission times (s) inside the pulse for photons emitted at couplings
        g_eff, blending the CDFs of the two bracketing grid points.
        """
        g_eff = np.atleast_1d(np.asarray(g_eff, dtype=float))
        uniforms = np.atleast_1d(np.asarray(uniforms, dtype=float))
        pos = np.clip(np.interp(g_eff, self.g_grid, np.arange(self.g_grid.size)),
                      0, self.g_grid.size - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, self.g_grid.size - 1)
        w = pos - lo
        out = np.empty(g_eff.size)
        for j in range(g_eff.size):
            cdf = (1.0 - w[j]) * self.cdfs[lo[j]] + w[j] * self.cdfs[hi[j]]
            out[j] = np.interp(uniforms[j], cdf, self.time_grid)
        return out


def tabulate_efficiency(params: CavityQedParams, n_grid: int = 65, progress: bool = False) -> EfficiencyTable:
    """
    Solve the pulse on n_grid evenly spaced couplings in [0, g_max].
    """
    if n_grid < 2:
        raise ValidationError(f"n_grid must be >= 2, got {n_grid}")
    g_grid = np.linspace(0.0, params.g_max, n_grid)
    logger.info(f"Tabulating emission probability on {n_grid} couplings up to "
                f"g_max/2pi={params.g_max / TWO_PI / 1e6:.3f} MHz")

    profiles = []
    for g in tqdm(g_grid, desc="Pump-pulse table", disable=not progress):
        profile, _ = evolve_pump_pulse(params, float(g))
        profiles.append(profile)

    probabilities = np.array([p.total_probability for p in profiles])
    logger.info(f"Optimal coupling: raw {probabilities[-1]:.4f}, "
                f"through output coupler {probabilities[-1] * params.escape_fraction:.4f}")
    return EfficiencyTable(g_grid=g_grid, probabilities=probabilities,
                           profiles=tuple(profiles), escape_fraction=params.escape_fraction)
