"""Direct integration of the coupled field/atom equations on a (tau, zeta) grid.

Atoms (Schrodinger, real retarded time)::

    d psi_+/dtau = (i/2) conj(Omega_+) psi_e
    d psi_-/dtau = (i/2) conj(Omega_-) psi_e
    d psi_e/dtau = (i/2) (Omega_+ psi_+ + Omega_- psi_-) - (gamma_e/2) psi_e

Fields (slowly varying envelopes)::

    d Omega_pm/dzeta = i g conj(psi_pm) psi_e

Atoms advance in tau with classical RK4 (fields linearly interpolated at
half steps). Fields advance in zeta with the trapezoidal rule, which is
implicit; an explicit midpoint variant is kept for weak coupling only,
since it amplifies unresolved dispersive modes when g * dzeta times the
tau window is large.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .model import AtomicState, FieldPair, MediumParams, SimulationGrid

logger = logging.getLogger(__name__)

NORM_DRIFT_PER_STEP = 1e-8


class StepSizeError(RuntimeError):
    """A tau step changed the state norm by more than the allowed drift."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during a run."""


def atom_rhs(fields: FieldPair, state: AtomicState, gamma_e: float = 0.0) -> AtomicState:
    """-i H psi with optional decay -(gamma_e/2) psi_e on the excited amplitude."""
    return AtomicState(
        0.5j * fields.omega_plus_bar * state.psi_e,
        0.5j * fields.omega_minus_bar * state.psi_e,
        0.5j * (fields.omega_plus * state.psi_plus + fields.omega_minus * state.psi_minus)
        - 0.5 * gamma_e * state.psi_e,
    )


def field_rhs(state: AtomicState, g: float) -> FieldPair:
    """zeta-derivative of the fields sourced by one atom (real-time convention)."""
    dp = 1j * g * np.conj(state.psi_plus) * state.psi_e
    dm = 1j * g * np.conj(state.psi_minus) * state.psi_e
    return FieldPair(dp, dm, np.conj(dp), np.conj(dm))


def _generator(op, om, gamma_e):
    """Matrices of -i H - (gamma_e/2)|e><e| for arrays of real-time fields."""
    n = op.shape[0]
    A = np.zeros((n, 3, 3), dtype=complex)
    A[:, 0, 2] = 0.5j * np.conj(op)
    A[:, 1, 2] = 0.5j * np.conj(om)
    A[:, 2, 0] = 0.5j * op
    A[:, 2, 1] = 0.5j * om
    A[:, 2, 2] = -0.5 * gamma_e
    return A


def rk4_propagators(op, om, dtau: float, gamma_e: float = 0.0) -> np.ndarray:
    """One-step RK4 propagators for the linear atom equation, one per tau interval.

    The generator is linear in the fields, so linear interpolation of the
    fields at half steps equals the average of the endpoint generators.
    """
    A = _generator(np.asarray(op), np.asarray(om), gamma_e)
    A0, A1 = A[:-1], A[1:]
    Am = 0.5 * (A0 + A1)
    h = dtau
    eye = np.eye(3)
    K1 = A0
    K2 = Am @ (eye + 0.5 * h * K1)
    K3 = Am @ (eye + 0.5 * h * K2)
    K4 = A1 @ (eye + h * K3)
    return eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _propagate(M: np.ndarray, psi0: np.ndarray) -> np.ndarray:
    """States psi[k] = M[k-1] @ ... @ M[0] @ psi0 for k = 0..n.

    Blocked scan: prefix products inside blocks of about sqrt(n) steps are
    formed across all blocks at once, then block carries are chained.
    """
    n = M.shape[0]
    b = max(1, int(np.sqrt(n)))
    nb = -(-n // b)
    pad = nb * b - n
    if pad:
        M = np.concatenate([M, np.broadcast_to(np.eye(3, dtype=M.dtype), (pad, 3, 3))])
    blocks = M.reshape(nb, b, 3, 3)
    P = np.empty_like(blocks)
    P[:, 0] = blocks[:, 0]
    for k in range(1, b):
        P[:, k] = blocks[:, k] @ P[:, k - 1]
    carry = np.empty((nb, 3), dtype=complex)
    carry[0] = psi0
    for m in range(1, nb):
        carry[m] = P[m - 1, -1] @ carry[m - 1]
    out = np.empty((n + 1, 3), dtype=complex)
    out[0] = psi0
    out[1:] = np.einsum("mkij,mj->mki", P, carry).reshape(nb * b, 3)[:n]
    return out


def integrate_atoms_line(op, om, initial, dtau: float, gamma_e: float = 0.0,
                         check_norm: bool = True) -> np.ndarray:
    """RK4 march of one atom along the tau grid; returns states of shape (n_tau, 3).

    ``op``/``om`` are the real-time fields sampled on the tau grid.
    Raises StepSizeError when a step moves the norm by more than 1e-8
    (only checked without decay).
    """
    psi0 = initial.as_array() if isinstance(initial, AtomicState) else np.asarray(initial, dtype=complex)
    out = _propagate(rk4_propagators(op, om, dtau, gamma_e), psi0)
    if check_norm and gamma_e == 0.0:
        norms = np.sum(np.abs(out) ** 2, axis=1)
        drift = np.abs(np.diff(norms))
        worst = int(np.argmax(drift))
        if drift[worst] > NORM_DRIFT_PER_STEP:
            raise StepSizeError(
                f"norm drift {drift[worst]:.3e} in tau step {worst} exceeds "
                f"{NORM_DRIFT_PER_STEP:g}; reduce dtau (now {dtau:g})"
            )
    return out


def dark_vector(op, om) -> np.ndarray:
    """Normalized null vector Omega_-|+> - Omega_+|-> of real-time fields."""
    op, om = np.broadcast_arrays(np.asarray(op, dtype=complex), np.asarray(om, dtype=complex))
    vec = np.stack([om, -op, np.zeros_like(op)], axis=-1)
    norm = np.sqrt(np.abs(op) ** 2 + np.abs(om) ** 2)
    if np.any(norm == 0):
        raise ValueError("dark state undefined where both fields vanish")
    return vec / norm[..., None]


@dataclass
class BoundaryCondition:
    """Incoming fields at zeta_min and atom states at tau_min.

    ``initial`` is either one state (shape (3,), used at every zeta) or one
    state per zeta node (shape (n_zeta, 3)). ``None`` selects the dark
    state of the incoming fields at tau_min.
    """

    omega_plus: np.ndarray
    omega_minus: np.ndarray
    initial: Optional[np.ndarray] = None

    def initial_states(self, n_zeta: int) -> np.ndarray:
        if self.initial is None:
            psi = dark_vector(self.omega_plus[0], self.omega_minus[0])
        else:
            psi = np.asarray(self.initial, dtype=complex)
        psi = np.broadcast_to(psi, (n_zeta, 3)).copy()
        norms = np.sum(np.abs(psi) ** 2, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("initial atom states must be normalized to 1 within 1e-12")
        return psi

    @classmethod
    def from_functions(cls, grid: SimulationGrid, omega_plus: Callable, omega_minus: Callable,
                       initial=None) -> "BoundaryCondition":
        tau = grid.tau
        return cls(np.asarray(omega_plus(tau), dtype=complex) * np.ones_like(tau),
                   np.asarray(omega_minus(tau), dtype=complex) * np.ones_like(tau),
                   initial)


@dataclass
class RunRecord:
    """Field history (n_zeta, n_tau, 2), atom history (n_zeta, n_tau, 3) and diagnostics."""

    grid: SimulationGrid
    medium: MediumParams
    g_profile: np.ndarray
    fields: np.ndarray
    atoms: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def tau(self) -> np.ndarray:
        return self.grid.tau

    @property
    def zeta(self) -> np.ndarray:
        return self.grid.zeta

    @property
    def dtau(self) -> float:
        return self.grid.dtau

    @property
    def dzeta(self) -> float:
        return self.grid.dzeta

    @property
    def intensity(self) -> np.ndarray:
        return np.sum(np.abs(self.fields) ** 2, axis=-1)

    @property
    def excited_population(self) -> np.ndarray:
        return np.abs(self.atoms[..., 2]) ** 2


def _apply_generator(op, om, gamma_e, psi):
    """(-i H - gamma_e/2 |e><e|) psi for arrays of cells; psi has shape (..., 3)."""
    out = np.empty_like(psi)
    out[..., 0] = 0.5j * np.conj(op) * psi[..., 2]
    out[..., 1] = 0.5j * np.conj(om) * psi[..., 2]
    out[..., 2] = 0.5j * (op * psi[..., 0] + om * psi[..., 1]) - 0.5 * gamma_e * psi[..., 2]
    return out


def _rk4_cells(F0, F1, psi, h, gamma_e):
    """One RK4 tau step per cell with fields F0 -> F1 (linear in between)."""
    Fm = 0.5 * (F0 + F1)
    k1 = _apply_generator(F0[..., 0], F0[..., 1], gamma_e, psi)
    k2 = _apply_generator(Fm[..., 0], Fm[..., 1], gamma_e, psi + 0.5 * h * k1)
    k3 = _apply_generator(Fm[..., 0], Fm[..., 1], gamma_e, psi + 0.5 * h * k2)
    k4 = _apply_generator(F1[..., 0], F1[..., 1], gamma_e, psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _source(psi, g):
    """d Omega_pm / d zeta for atoms ``psi`` (..., 3); g broadcasts over leading axes."""
    return 1j * np.asarray(g)[..., None] * np.conj(psi[..., :2]) * psi[..., 2:3]


def _check_finite(arr, what, where):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite {what} at {where}")


def _march_midpoint(fields, atoms, psi0, g_nodes, g_mid, dt, dz, gamma):
    """Explicit midpoint predictor-corrector in zeta, RK4 lines in tau.

    Only stable while g * dzeta * (tau window) stays of order one; kept for
    weakly coupled media and for comparison.
    """
    nz = fields.shape[0]

    def line(F, p0):
        return integrate_atoms_line(F[:, 0], F[:, 1], p0, dt, gamma)

    for j in range(nz):
        atoms[j] = line(fields[j], psi0[j])
        _check_finite(atoms[j], "atom amplitude", f"zeta index {j}")
        if j == nz - 1:
            break
        F_pred = fields[j] + 0.5 * dz * _source(atoms[j], g_nodes[j])
        p_mid = 0.5 * (psi0[j] + psi0[j + 1])
        p_mid /= np.linalg.norm(p_mid)
        psi_pred = line(F_pred, p_mid)
        fields[j + 1] = fields[j] + dz * _source(psi_pred, g_mid[j])
        _check_finite(fields[j + 1], "field", f"zeta index {j + 1}")


def _slices_by_picard(fields, atoms, psi0, g_nodes, dt, dz, gamma, tol, max_iter=12):
    """Solve the trapezoid slices one at a time by iterating whole tau-lines.

    Converges fast when the coupling accumulated over the tau window is
    weak. Returns the first slice index that did not converge (``nz`` if
    all did); that slice and the ones after it are left for the cell solver.
    """
    nz = fields.shape[0]
    scale = max(float(np.max(np.abs(fields[0]))), 1e-300)
    for j in range(1, nz):
        S_prev = _source(atoms[j - 1], g_nodes[j - 1])
        F = fields[j - 1] + (fields[j - 1] - fields[j - 2] if j >= 2 else 0.0)
        F[0] = fields[j, 0]
        last = np.inf
        with np.errstate(all="ignore"):
            for _ in range(max_iter):
                psi = integrate_atoms_line(F[:, 0], F[:, 1], psi0[j], dt, gamma, check_norm=False)
                F_new = fields[j - 1] + 0.5 * dz * (S_prev + _source(psi, g_nodes[j]))
                delta = float(np.max(np.abs(F_new - F)))
                F = F_new
                if not np.isfinite(delta) or delta > last:
                    break
                last = delta
                if delta <= tol * scale:
                    break
        if not delta <= tol * scale:
            return j
        fields[j] = F
        atoms[j] = integrate_atoms_line(F[:, 0], F[:, 1], psi0[j], dt, gamma)
    return nz


def _march_trapezoid(fields, atoms, psi0, g_nodes, dt, dz, gamma, tol=1e-14, max_iter=100, whole_slices=True):
    """Trapezoidal rule in zeta, RK4 in tau.

    Slices are first attempted whole (see ``_slices_by_picard``). From the
    first slice where that fails, cells are solved directly: cell (i, j)
    needs only (i-1, j) and (i, j-1), so each anti-diagonal i + j = d is
    solved at once, iterating the local implicit system to a fixed point.
    """
    nz, nt = fields.shape[:2]
    atoms[0] = integrate_atoms_line(fields[0, :, 0], fields[0, :, 1], psi0[0], dt, gamma)
    _check_finite(atoms[0], "atom amplitude", "zeta index 0")
    atoms[1:, 0] = psi0[1:]
    src0 = _source(atoms[:, 0], g_nodes)
    for j in range(1, nz):
        fields[j, 0] = fields[j - 1, 0] + 0.5 * dz * (src0[j - 1] + src0[j])
    scale = max(float(np.max(np.abs(fields[0]))), 1e-300)
    j0 = _slices_by_picard(fields, atoms, psi0, g_nodes, dt, dz, gamma, tol) if whole_slices else 1
    if j0 < nz:
        logger.debug("whole-slice iteration stopped at zeta index %d; solving cells", j0)
    for d in range(j0 + 1, nt + nz - 1 if j0 < nz else 0):
        j = np.arange(max(j0, d - (nt - 1)), min(nz - 1, d - 1) + 1)
        i = d - j
        F_tau = fields[j, i - 1]
        psi_tau = atoms[j, i - 1]
        F_z = fields[j - 1, i]
        S_z = _source(atoms[j - 1, i], g_nodes[j - 1])
        g_here = g_nodes[j]
        F = F_z + (F_tau - fields[j - 1, i - 1])
        for _ in range(max_iter):
            psi = _rk4_cells(F_tau, F, psi_tau, dt, gamma)
            F_new = F_z + 0.5 * dz * (S_z + _source(psi, g_here))
            delta = np.max(np.abs(F_new - F))
            F = F_new
            if delta <= tol * scale:
                break
        else:
            raise NumericalError(
                f"implicit zeta step did not converge on diagonal {d} (last change {delta:.3e}); "
                f"the cell iteration needs g*dzeta*dtau of order 1 or less (now {np.max(g_nodes) * dz * dt:.3g})"
            )
        psi = _rk4_cells(F_tau, F, psi_tau, dt, gamma)
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(F))):
            bad = int(np.argmax(~np.isfinite(psi).all(axis=-1)))
            raise NumericalError(f"non-finite values at tau index {i[bad]}, zeta index {j[bad]}")
        if gamma == 0.0:
            drift = np.abs(np.sum(np.abs(psi) ** 2, -1) - np.sum(np.abs(psi_tau) ** 2, -1))
            k = int(np.argmax(drift))
            if drift[k] > NORM_DRIFT_PER_STEP:
                raise StepSizeError(
                    f"norm drift {drift[k]:.3e} at tau index {i[k]}, zeta index {j[k]} "
                    f"exceeds {NORM_DRIFT_PER_STEP:g}; reduce dtau (now {dt:g})"
                )
        fields[j, i] = F
        atoms[j, i] = psi


SCHEMES = ("trapezoid", "explicit-midpoint")


def run_simulation(grid: SimulationGrid, medium: MediumParams, boundary: BoundaryCondition,
                   g_of_zeta: Union[None, Callable] = None, scheme: str = "trapezoid") -> RunRecord:
    """March the coupled system through the grid.

    Default scheme: trapezoidal rule in zeta (second order, no growth of
    the unresolved dispersive modes of a lossless medium), classical RK4
    in tau with linearly interpolated fields (fourth order).
    ``g_of_zeta`` overrides the constant ``medium.g`` with a depth profile.
    """
    from .adiabaticity import dark_state_fidelity_array

    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    zeta = grid.zeta
    dt, dz = grid.dtau, grid.dzeta
    nz, nt = grid.n_zeta, grid.n_tau
    g_at = (lambda z: medium.g) if g_of_zeta is None else g_of_zeta
    g_nodes = np.array([float(g_at(z)) for z in zeta])
    if np.any(g_nodes < 0):
        raise ValueError("coupling profile must be >= 0")

    psi0 = boundary.initial_states(nz)
    fields = np.empty((nz, nt, 2), dtype=complex)
    atoms = np.empty((nz, nt, 3), dtype=complex)
    fields[0, :, 0] = boundary.omega_plus
    fields[0, :, 1] = boundary.omega_minus
    if scheme == "trapezoid":
        _march_trapezoid(fields, atoms, psi0, g_nodes, dt, dz, medium.gamma_e)
    else:
        g_mid = np.array([float(g_at(z + 0.5 * dz)) for z in zeta[:-1]])
        _march_midpoint(fields, atoms, psi0, g_nodes, g_mid, dt, dz, medium.gamma_e)

    record = RunRecord(grid, medium, g_nodes, fields, atoms)
    norms = np.sum(np.abs(atoms) ** 2, axis=-1)
    intensity = record.intensity
    lit = intensity > 1e-12 * max(float(np.max(intensity)), 1e-300)
    fid = np.full((nz, nt), np.nan)
    if np.any(lit):
        fid[lit] = dark_state_fidelity_array(fields[..., 0][lit], fields[..., 1][lit], atoms[lit])
    with np.errstate(all="ignore"):
        min_fid = np.array([np.nanmin(r) if np.any(np.isfinite(r)) else np.nan for r in fid])
    record.diagnostics = {
        "zeta": zeta.copy(),
        "norm_drift": np.max(np.abs(norms - 1.0), axis=1),
        "min_fidelity": min_fid,
        "max_excited": np.max(np.abs(atoms[..., 2]) ** 2, axis=1),
        "conservation_residual": _residual_per_slice(record),
    }
    return record


def _residual_field(record: RunRecord) -> np.ndarray:
    """Central-difference d/dzeta |Omega|^2 + 2 g d/dtau |psi_e|^2 on interior nodes."""
    I = record.intensity
    P = record.excited_population
    g = record.g_profile[1:-1, None]
    dI = (I[2:, 1:-1] - I[:-2, 1:-1]) / (2.0 * record.dzeta)
    dP = (P[1:-1, 2:] - P[1:-1, :-2]) / (2.0 * record.dtau)
    return dI + 2.0 * g * dP


def _residual_per_slice(record: RunRecord) -> np.ndarray:
    out = np.full(record.grid.n_zeta, np.nan)
    if record.grid.n_zeta >= 3 and record.grid.n_tau >= 3:
        r = _residual_field(record)
        out[1:-1] = np.sqrt(np.sum(r**2, axis=1) * record.dtau)
    return out


def excitation_conservation_residual(record: RunRecord) -> float:
    """Grid-L2 norm of the discrete local excitation-conservation law (gamma_e = 0)."""
    if record.medium.gamma_e != 0:
        raise ValueError("conservation law only holds without excited-state decay")
    r = _residual_field(record)
    return float(np.sqrt(np.sum(r**2) * record.dtau * record.dzeta))
