import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import kink_spec
from slowlight.adiabaton import AdiabatonSpec, build_fields
from slowlight.model import (
    EXCITED,
    MINUS,
    PLUS,
    AtomicState,
    EnvelopeSpec,
    FieldPair,
    MediumParams,
    ShapeSpec,
    SimulationGrid,
)
from slowlight.scenarios import adiabaton_boundary, analytic_field_array, relative_l2_deviation
from slowlight.solver import (
    BoundaryCondition,
    NumericalError,
    StepSizeError,
    _march_trapezoid,
    _propagate,
    atom_rhs,
    dark_vector,
    excitation_conservation_residual,
    field_rhs,
    integrate_atoms_line,
    rk4_propagators,
    run_simulation,
)

# ------------------------------------------------------------ right-hand sides


def test_atom_rhs_dark_state_is_stationary():
    f = FieldPair.real_time(0.3 + 0.4j, -1.2)
    d = dark_vector(f.omega_plus, f.omega_minus)
    np.testing.assert_allclose(atom_rhs(f, AtomicState.from_array(d)).as_array(), 0, atol=1e-16)


def test_atom_rhs_single_coupling():
    assert atom_rhs(FieldPair.real_time(2.0, 0.0), PLUS).psi_e == 1j


def test_atom_rhs_pure_decay():
    assert atom_rhs(FieldPair.real_time(0.0, 0.0), EXCITED, gamma_e=0.4).psi_e == pytest.approx(-0.2)


def test_field_rhs_examples():
    assert field_rhs(MINUS, 3.0).omega_plus == 0
    s = AtomicState(1 / math.sqrt(2), 0.0, 1 / math.sqrt(2))
    assert field_rhs(s, 1.0).omega_plus == pytest.approx(0.5j)
    assert field_rhs(s, 0.0).omega_plus == 0


# -------------------------------------------------------------- tau lines


def _const_line(n, omega0=1.0):
    return np.full(n, omega0, dtype=complex), np.zeros(n, dtype=complex)


def test_line_dark_state_stays_put():
    op, om = _const_line(10001)
    psi = integrate_atoms_line(op, om, MINUS, 1e-2)
    assert np.max(np.abs(psi - [0, 1, 0])) <= 1e-12


def test_line_rabi_oracle():
    omega0 = 1.7
    dt = 1e-3 / omega0
    n = int(round(2 * math.pi / omega0 / dt)) + 1
    tau = dt * np.arange(n)
    op, om = _const_line(n, omega0)
    psi = integrate_atoms_line(op, om, PLUS, dt)
    assert np.max(np.abs(psi[:, 0] - np.cos(omega0 * tau / 2))) <= 1e-8
    assert np.max(np.abs(psi[:, 2] - 1j * np.sin(omega0 * tau / 2))) <= 1e-8


def test_line_zero_fields_constant_state():
    s = np.array([0.6, 0.0, 0.8j])
    psi = integrate_atoms_line(np.zeros(50), np.zeros(50), s, 0.3)
    np.testing.assert_array_equal(psi, np.broadcast_to(s, psi.shape))


def test_line_decay():
    psi = integrate_atoms_line(np.zeros(101), np.zeros(101), EXCITED, 0.01, gamma_e=2.0)
    assert abs(psi[-1, 2]) == pytest.approx(math.exp(-1.0), rel=1e-9)


def test_line_rejects_coarse_steps():
    op, om = _const_line(20)
    with pytest.raises(StepSizeError, match="reduce dtau"):
        integrate_atoms_line(op, om, PLUS, 1.5)


@given(st.integers(1, 300), st.integers(0, 2**31))
def test_blocked_scan_matches_sequential_product(n, seed):
    r = np.random.default_rng(seed)
    op = r.normal(size=n + 1) + 1j * r.normal(size=n + 1)
    om = r.normal(size=n + 1) + 1j * r.normal(size=n + 1)
    M = rk4_propagators(op, om, 0.05)
    psi0 = np.array([0.6, 0.8j, 0.0])
    ref = [psi0]
    for k in range(n):
        ref.append(M[k] @ ref[-1])
    np.testing.assert_allclose(_propagate(M, psi0), np.array(ref), atol=1e-12)


# ------------------------------------------------------------ full solver


def _pulse_boundary(grid, initial=None, alpha=0.0):
    tau = grid.tau
    op = np.exp(1j * alpha) * (0.8 + 0.5 * np.exp(-((tau - 8) / 3) ** 2))
    om = np.exp(1j * alpha) * (0.6 * np.tanh((tau - 10) / 4) + 0.1j)
    return BoundaryCondition(op, om, initial)


def test_vacuum_leaves_fields_unchanged():
    grid = SimulationGrid(0, 20, 401, 0, 3, 7)
    bc = _pulse_boundary(grid, np.array([0.6, 0.0, 0.8]))
    rec = run_simulation(grid, MediumParams(0.0), bc)
    assert np.max(np.abs(rec.fields - rec.fields[0])) <= 1e-12
    assert excitation_conservation_residual(rec) <= 1e-12


def test_stationary_dark_state_run_is_flat():
    grid = SimulationGrid(0, 50, 5001, 0, 1, 11)
    bc = BoundaryCondition(np.full(grid.n_tau, 0.8 + 0j), np.full(grid.n_tau, 0.6j))
    rec = run_simulation(grid, MediumParams(100.0), bc)
    d = rec.diagnostics
    assert np.max(d["norm_drift"]) <= 1e-10
    assert np.min(d["min_fidelity"]) >= 1 - 1e-10
    assert np.max(np.abs(rec.fields - rec.fields[0])) <= 1e-12
    assert excitation_conservation_residual(rec) <= 1e-10


def test_norm_conserved_at_reference_resolution():
    grid = SimulationGrid(0, 20, 20001, 0, 1, 5)
    rec = run_simulation(grid, MediumParams(1.0), _pulse_boundary(grid, np.array([1, 0, 0])))
    assert np.max(rec.diagnostics["norm_drift"]) <= 1e-9


@pytest.mark.parametrize("alpha", [0.4, -2.0])
def test_gauge_covariance(alpha):
    grid = SimulationGrid(0, 20, 201, 0, 1, 11)
    psi0 = np.array([0.6, 0.8, 0.0], dtype=complex)
    a = run_simulation(grid, MediumParams(2.0), _pulse_boundary(grid, psi0))
    b = run_simulation(grid, MediumParams(2.0), _pulse_boundary(grid, psi0, alpha))
    np.testing.assert_allclose(b.fields, np.exp(1j * alpha) * a.fields, atol=1e-12)
    np.testing.assert_allclose(np.abs(b.atoms), np.abs(a.atoms), atol=1e-12)
    np.testing.assert_allclose(b.intensity, a.intensity, atol=1e-12)


def test_whole_slice_and_cell_solvers_agree():
    grid = SimulationGrid(0, 20, 201, 0, 1, 11)
    bc = _pulse_boundary(grid, np.array([0.6, 0.8, 0.0], dtype=complex))
    out = []
    for whole in (True, False):
        fields = np.empty((grid.n_zeta, grid.n_tau, 2), complex)
        atoms = np.empty((grid.n_zeta, grid.n_tau, 3), complex)
        fields[0, :, 0], fields[0, :, 1] = bc.omega_plus, bc.omega_minus
        g = np.full(grid.n_zeta, 2.0)
        _march_trapezoid(fields, atoms, bc.initial_states(grid.n_zeta), g, grid.dtau, grid.dzeta, 0.0,
                         whole_slices=whole)
        out.append(fields)
    np.testing.assert_allclose(out[0], out[1], atol=1e-12)


def test_schemes_agree_for_weak_coupling():
    grid = SimulationGrid(0, 20, 401, 0, 1, 41)
    bc = _pulse_boundary(grid, np.array([0.6, 0.8, 0.0], dtype=complex))
    a = run_simulation(grid, MediumParams(0.5), bc)
    b = run_simulation(grid, MediumParams(0.5), bc, scheme="explicit-midpoint")
    assert np.max(np.abs(a.fields - b.fields)) <= 1e-4


def test_explicit_midpoint_fails_on_strongly_coupled_adiabaton():
    s = kink_spec(a=0.5, center=-2.5)
    grid = SimulationGrid(0, 1200, 1001, 0, 1, 101)
    bc = adiabaton_boundary(s, grid)
    with pytest.raises((StepSizeError, NumericalError)):
        run_simulation(grid, s.medium, bc, scheme="explicit-midpoint")
    rec = run_simulation(grid, s.medium, bc)
    assert relative_l2_deviation(rec.fields, analytic_field_array(s, grid)) <= 1e-3


def test_single_beam_phase_does_not_evolve():
    # Theta = 0 with a phase gradient: the lone beam keeps its boundary phase,
    # which is what the implemented phase sum predicts.
    s = AdiabatonSpec(EnvelopeSpec("constant", 1.0), ShapeSpec("constant", 0.0), ShapeSpec("linear", 2.0, 1.0),
                      MediumParams(50.0), 0.0, -3.0)
    grid = SimulationGrid(0, 100, 201, 0, 1, 21)
    rec = run_simulation(grid, s.medium, adiabaton_boundary(s, grid, "dark"))
    np.testing.assert_allclose(rec.fields, analytic_field_array(s, grid), atol=1e-12)
    np.testing.assert_allclose(rec.fields, np.broadcast_to(rec.fields[0], rec.fields.shape), atol=1e-12)


def test_transparency_for_uniform_dark_medium():
    grid = SimulationGrid(0, 30, 601, 0, 2, 21)
    tau = grid.tau
    op = np.full(tau.shape, 1.0 + 0j)
    om = np.full(tau.shape, 0.5 - 0.5j)
    rec = run_simulation(grid, MediumParams(10.0), BoundaryCondition(op, om))
    assert np.max(np.abs(rec.fields - rec.fields[0])) <= 1e-12


def test_coupling_profile():
    grid = SimulationGrid(0, 20, 201, 0, 1, 6)
    bc = _pulse_boundary(grid, np.array([1.0, 0.0, 0.0], dtype=complex))
    rec = run_simulation(grid, MediumParams(5.0), bc, g_of_zeta=lambda z: 0.0)
    assert np.max(np.abs(rec.fields - rec.fields[0])) == 0.0
    with pytest.raises(ValueError):
        run_simulation(grid, MediumParams(5.0), bc, g_of_zeta=lambda z: -1.0)


def test_boundary_validation_and_nan_reporting():
    grid = SimulationGrid(0, 10, 11, 0, 1, 3)
    with pytest.raises(ValueError, match="normalized"):
        BoundaryCondition(np.ones(11), np.zeros(11), np.array([1.0, 1.0, 0.0])).initial_states(3)
    op = np.ones(11, dtype=complex)
    op[5] = np.nan
    with pytest.raises(NumericalError, match="non-finite"):
        run_simulation(grid, MediumParams(1.0), BoundaryCondition(op, np.zeros(11, complex), np.array([1, 0, 0])))
    with pytest.raises(ValueError):
        run_simulation(grid, MediumParams(1.0), BoundaryCondition(op.real * 0 + 1, np.zeros(11)), scheme="euler")


def test_conservation_residual_needs_lossless_medium():
    grid = SimulationGrid(0, 10, 101, 0, 1, 3)
    rec = run_simulation(grid, MediumParams(1.0, gamma_e=0.1), _pulse_boundary(grid, np.array([1, 0, 0])))
    with pytest.raises(ValueError):
        excitation_conservation_residual(rec)


def test_record_shapes():
    grid = SimulationGrid(0, 10, 51, 0, 1, 4)
    rec = run_simulation(grid, MediumParams(1.0), _pulse_boundary(grid))
    assert rec.fields.shape == (4, 51, 2) and rec.atoms.shape == (4, 51, 3)
    assert rec.diagnostics["norm_drift"].shape == (4,)
    assert rec.dtau == grid.dtau and rec.dzeta == grid.dzeta
