import numpy as np
import pytest
from scipy.integrate import trapezoid

from cavity_dynamics import (DIM, G0, G1, INTEGRATOR_ATOL, INTEGRATOR_RTOL, PROFILE_POINTS, SINK, TWO_PI, U0,
                             CavityQedParams, build_generator, emission_probability, evolve_fixed_step,
                             evolve_pump_pulse, tabulate_efficiency)
from errors import ValidationError

TRACE_ROW = np.eye(DIM).flatten()


def _random_hermitian(rng):
    a = rng.normal(size=(DIM, DIM)) + 1j * rng.normal(size=(DIM, DIM))
    return a + a.conj().T


@pytest.mark.parametrize("t_frac", [0.0, 0.37, 1.0])
def test_generator_preserves_trace_and_hermiticity(params, t_frac):
    rng = np.random.default_rng(3)
    generator = build_generator(params, params.g_max, t_frac * params.tau_pump)
    rho = _random_hermitian(rng)
    drho = (generator @ rho.flatten()).reshape(DIM, DIM)

    scale = np.abs(generator).max()
    assert abs(TRACE_ROW @ (generator @ rho.flatten())) < 1e-12 * scale * DIM ** 2
    assert np.allclose(drho, drho.conj().T, atol=1e-12 * scale * DIM ** 2)


def test_generator_leaves_initial_state_fixed_before_pump(params):
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[U0, U0] = 1.0
    generator = build_generator(params, 0.0, 0.0)
    assert np.allclose(generator @ rho.flatten(), 0.0)


@pytest.mark.parametrize("g_eff, t", [(-1.0, 0.0), (1.0, -1e-9), (1.0, 3e-6)])
def test_generator_rejects_bad_arguments(params, g_eff, t):
    with pytest.raises(ValidationError):
        build_generator(params, g_eff, t)


def test_uncoupled_atom_never_emits(params):
    profile, final = evolve_pump_pulse(params, 0.0)
    assert profile.total_probability == pytest.approx(0.0, abs=1e-12)
    assert final.populations[G1] == pytest.approx(0.0, abs=1e-12)
    assert final.populations[G0] == pytest.approx(0.0, abs=1e-12)


def test_optimal_coupling_efficiency(params):
    p = emission_probability(params, params.g_max)
    assert p == pytest.approx(0.616, abs=0.08)


def test_excited_state_decays_at_gamma_perp(params):
    # doubling gamma_perp reproduces the polarisation-decay convention (rate 2*gamma_perp)
    doubled = CavityQedParams(gamma_perp=2.0 * params.gamma_perp)
    assert emission_probability(doubled, params.g_max) == pytest.approx(0.52896, abs=1e-5)
    assert emission_probability(doubled, params.g_max) < emission_probability(params, params.g_max)


def test_half_coupling_reference_value(params):
    doubled = CavityQedParams(gamma_perp=2.0 * params.gamma_perp)
    assert emission_probability(doubled, 0.5 * params.g_max) == pytest.approx(0.1830843, abs=1e-6)

    adaptive, _ = evolve_pump_pulse(params, 0.5 * params.g_max, n_points=101)
    reference, _ = evolve_fixed_step(params, 0.5 * params.g_max, n_points=101)
    assert adaptive.total_probability == pytest.approx(reference.total_probability, abs=1e-5)


def test_doubled_resolution_converges(params):
    base = emission_probability(params, params.g_max)
    fine, _ = evolve_pump_pulse(params, params.g_max, n_points=2 * PROFILE_POINTS - 1,
                                atol=INTEGRATOR_ATOL / 2, rtol=INTEGRATOR_RTOL / 2)
    assert abs(fine.total_probability - base) < 1e-4


def test_table_interpolates_between_nodes(params, table):
    mids = 0.5 * (table.g_grid[:-1] + table.g_grid[1:])
    for g in mids[::8]:
        assert abs(table.probability(g) - emission_probability(params, float(g))) < 1e-3


def test_pulse_state_stays_physical(params):
    profile, final = evolve_pump_pulse(params, params.g_max)
    assert final.trace() == pytest.approx(1.0, abs=1e-8)
    assert final.min_eigenvalue() >= -1e-8
    assert final.hermiticity_error() < 1e-10
    assert 0.0 < final.sink < 1.0
    assert np.all(profile.rate >= 0)
    assert 0.0 <= profile.total_probability <= 1.0
    assert np.all(np.diff(profile.cumulative) >= 0)
    assert profile.cumulative[-1] == profile.total_probability


def test_emission_rate_integrates_to_total(params):
    profile, _ = evolve_pump_pulse(params, params.g_max, n_points=2001)
    integral = trapezoid(profile.rate, profile.time_grid)
    assert integral == pytest.approx(profile.total_probability, rel=1e-3)


def test_adaptive_solver_matches_fixed_step_reference(params):
    adaptive, _ = evolve_pump_pulse(params, 0.6 * params.g_max, n_points=101)
    reference, _ = evolve_fixed_step(params, 0.6 * params.g_max, n_points=101)
    assert adaptive.total_probability == pytest.approx(reference.total_probability, abs=1e-4)
    assert np.allclose(adaptive.cumulative, reference.cumulative, atol=1e-4)


def test_table_endpoints_do_not_depend_on_grid(params, table):
    coarse = tabulate_efficiency(params, 2)
    assert coarse.probabilities[0] == table.probabilities[0] == 0.0
    assert coarse.probabilities[-1] == table.probabilities[-1]


def test_table_lookup(table):
    assert table.probability(0.0) == 0.0
    assert table.probability(table.g_max) == pytest.approx(table.probabilities[-1])
    assert table.escape_weighted(table.g_max) == pytest.approx(0.9 * table.probabilities[-1])
    mid = table.g_grid[10]
    assert table.probability(mid) == pytest.approx(table.probabilities[10])


def test_emission_times_lie_inside_pulse(table, params):
    u = np.linspace(0.0, 0.999, 50)
    times = table.sample_emission_times(np.full(u.size, 0.83 * table.g_max), u)
    assert np.all(times >= 0.0)
    assert np.all(times <= params.tau_pump)
    assert np.all(np.diff(times) >= 0)


def test_params_validation():
    with pytest.raises(ValidationError):
        CavityQedParams(kappa=-1.0)
    with pytest.raises(ValidationError):
        CavityQedParams(escape_fraction=1.2)
    params = CavityQedParams(delta=TWO_PI * 5e6)
    assert params.omega(params.tau_pump) == pytest.approx(params.omega_max)
    assert SINK == DIM - 1
