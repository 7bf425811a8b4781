"""Shape-preserving two-color pulses (adiabatons) and their dark states.

The total envelope Omega(tau) travels at c while the polarization profile
Theta(xi), phi(xi) is carried along the comoving coordinate

    xi = zeta - (1 / 2g) * integral_{tau_ref}^{tau} Omega**2 dtau'.

Fields follow the ansatz

    Omega_+ = Omega e^{+i phi_+} cos(Theta),  Omega_- = Omega e^{+i phi_-} sin(Theta)

with phi_+ - phi_- = phi and phi_+ + phi_- = Sigma(xi) where
dSigma/dxi = -cos(2 Theta) dphi/dxi. That sign is the one forced by the
field equations as implemented in :mod:`slowlight.solver` (for Theta = 0
the lone beam Omega_+ must not evolve in zeta).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (
    AtomicState,
    DomainError,
    EnvelopeSpec,
    FieldPair,
    MediumParams,
    ShapeSpec,
    continue_conjugate,
    envelope_antiderivative,
    envelope_squared,
    evaluate_envelope,
    tanh_ramp_path_integral,
)
from .quadrature import (
    cumulative_integral,
    segment_integral,
    segment_integral_vectorized,
)


class SingularRatioError(ZeroDivisionError):
    """Dark state requested where the reference beam of the gauge vanishes."""


@dataclass(frozen=True)
class AdiabatonSpec:
    envelope: EnvelopeSpec
    theta: ShapeSpec
    phi: ShapeSpec
    medium: MediumParams
    tau_ref: float = 0.0
    xi_ref: float = 0.0

    def __post_init__(self):
        if not self.medium.g > 0:
            raise ValueError("adiabaton requires g > 0")
        if self.envelope.family == "constant" and self.envelope.amplitude == 0:
            raise ValueError("envelope is identically zero")

    @property
    def g(self) -> float:
        return self.medium.g


class Profile(NamedTuple):
    """Everything the ansatz needs at one (zeta, tau) point or array of points."""

    xi: np.ndarray
    omega: np.ndarray
    omega_bar: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray


@dataclass(frozen=True)
class DarkStateResult:
    state: AtomicState
    n0: complex
    n_phase: complex
    n_bar_phase: complex
    gauge: str


# --------------------------------------------------------------------------
# comoving coordinate and phase sum
# --------------------------------------------------------------------------


def accumulated_intensity(envelope: EnvelopeSpec, tau, tau_ref: float = 0.0):
    """integral_{tau_ref}^{tau} Omega**2 dtau' along straight contours."""
    tau = np.asarray(tau)
    prim = envelope_antiderivative(envelope, tau)
    if prim is not None:
        return prim - envelope_antiderivative(envelope, np.asarray(tau_ref, dtype=tau.dtype))
    f = lambda t: envelope_squared(envelope, t)  # noqa: E731
    if not np.iscomplexobj(tau):
        return cumulative_integral(f, tau, tau_ref, max_panel=envelope.width / 4.0)
    if envelope.family == "tanh-ramp":
        out = tanh_ramp_path_integral(envelope, tau_ref, tau)
        return out[()] if np.ndim(out) == 0 else out
    if tau.ndim == 0:
        return segment_integral(f, tau_ref, complex(tau))
    flat = np.array([segment_integral(f, tau_ref, t) for t in tau.ravel()])
    return flat.reshape(tau.shape)


def comoving_coordinate(spec: AdiabatonSpec, zeta, tau):
    """xi = zeta - (1/2g) integral_{tau_ref}^{tau} Omega**2."""
    return np.asarray(zeta) - accumulated_intensity(spec.envelope, tau, spec.tau_ref) / (2.0 * spec.g)


def _sigma_integrand(spec):
    return lambda x: -np.cos(2.0 * spec.theta(x)) * spec.phi.derivative(x)


def phase_sum(spec: AdiabatonSpec, xi):
    """Sigma(xi) = phi_+ + phi_- = -integral_{xi_ref}^{xi} cos(2 Theta) phi' dxi'."""
    xi = np.asarray(xi)
    x0 = spec.xi_ref
    if spec.phi.is_constant:
        return np.zeros_like(xi, dtype=xi.dtype if np.iscomplexobj(xi) else float)[()]
    if spec.theta.is_constant:
        c = np.cos(2.0 * spec.theta(x0))
        return -c * (spec.phi(xi) - spec.phi(x0))
    f = _sigma_integrand(spec)
    scale = min(spec.theta.width, spec.phi.width)
    if not np.iscomplexobj(xi):
        return cumulative_integral(f, xi, x0, max_panel=scale / 8.0)[()]
    if xi.ndim == 0:
        return segment_integral(f, x0, complex(xi))
    # panel count grows with contour length; bucket points so one far point
    # does not set the cost for all of them
    dist = np.abs(xi - x0)
    need = np.clip(np.ceil(np.nan_to_num(dist, nan=0.0, posinf=0.0) / scale * 2), 4, 512)
    buckets = np.minimum(2 ** np.ceil(np.log2(need)), 512)
    out = np.full(xi.shape, np.nan + 0j)
    ok = np.isfinite(xi)
    for nb in np.unique(buckets[ok]):
        m = ok & (buckets == nb)
        out[m] = segment_integral_vectorized(f, x0, xi[m], n_panels=int(nb))
    return out


# --------------------------------------------------------------------------
# fields and dark state
# --------------------------------------------------------------------------


def profile(spec: AdiabatonSpec, zeta, tau) -> Profile:
    xi = comoving_coordinate(spec, zeta, tau)
    theta = spec.theta(xi)
    phi = spec.phi(xi)
    sigma = phase_sum(spec, xi)
    return Profile(
        xi=xi,
        omega=evaluate_envelope(spec.envelope, tau),
        omega_bar=continue_conjugate(spec.envelope, tau),
        theta=theta,
        phi=phi,
        phi_plus=0.5 * (sigma + phi),
        phi_minus=0.5 * (sigma - phi),
    )


def build_fields(spec: AdiabatonSpec, zeta, tau) -> FieldPair:
    """Ansatz fields at (zeta, tau); tau may be complex."""
    p = profile(spec, zeta, tau)
    c, s = np.cos(p.theta), np.sin(p.theta)
    return FieldPair(
        p.omega * np.exp(1j * p.phi_plus) * c,
        p.omega * np.exp(1j * p.phi_minus) * s,
        p.omega_bar * np.exp(-1j * p.phi_plus) * c,
        p.omega_bar * np.exp(-1j * p.phi_minus) * s,
    )


def _ratio(spec, zeta, tau, swapped):
    """Field ratio, its continued conjugate, and their tau-derivatives.

    Unswapped: r = Omega_-/Omega_+ = e^{-i phi} tan(Theta).
    Swapped:   s = Omega_+/Omega_- = e^{+i phi} cot(Theta).
    """
    xi = comoving_coordinate(spec, zeta, tau)
    th, ph = spec.theta(xi), spec.phi(xi)
    dth, dph = spec.theta.derivative(xi), spec.phi.derivative(xi)
    dxi = -envelope_squared(spec.envelope, tau) / (2.0 * spec.g)
    if not swapped:
        t = np.tan(th)
        dt = dth / np.cos(th) ** 2
        sign = -1.0
    else:
        t = 1.0 / np.tan(th)
        dt = -dth / np.sin(th) ** 2
        sign = 1.0
    e = np.exp(sign * 1j * ph)
    eb = np.exp(-sign * 1j * ph)
    r = e * t
    rbar = eb * t
    dr = e * (dt + sign * 1j * dph * t) * dxi
    drbar = eb * (dt - sign * 1j * dph * t) * dxi
    return r, rbar, dr, drbar


def _norm_phase(spec, zeta, tau, swapped):
    """exp of +-1/2 integral N0^2 (r d rbar - rbar d r) from tau_ref to tau."""

    def integrand(t):
        r, rbar, dr, drbar = _ratio(spec, zeta, t, swapped)
        n0sq = 1.0 / (1.0 + rbar * r)
        return 0.5 * n0sq * (r * drbar - rbar * dr)

    val = segment_integral(integrand, spec.tau_ref, tau)
    return np.exp(val), np.exp(-val)


def _gauge_state(spec, zeta, tau, swapped):
    f = build_fields(spec, zeta, tau)
    ref_bar = f.omega_minus_bar if swapped else f.omega_plus_bar
    ref = f.omega_minus if swapped else f.omega_plus
    tiny = 1e-12 * np.sqrt(abs(f.total_intensity))
    if abs(ref) <= tiny or abs(ref_bar) <= tiny:
        which = "Omega_-" if swapped else "Omega_+"
        raise SingularRatioError(f"{which} vanishes at zeta={zeta}, tau={tau}")
    r, rbar, dr, _ = _ratio(spec, zeta, tau, swapped)
    n0 = (1.0 + rbar * r) ** -0.5
    n_phase, n_bar_phase = _norm_phase(spec, zeta, tau, swapped)
    n = n0 * n_phase
    psi_ref = -n * r
    psi_other = n
    psi_e = 1j * n * 2.0 * n0**2 / ref_bar * dr
    if swapped:
        state = (psi_other, psi_ref, psi_e)
    else:
        state = (psi_ref, psi_other, psi_e)
    return state, n0, n_phase, n_bar_phase


def dark_state(spec: AdiabatonSpec, zeta: float, tau, gauge: str = "auto") -> DarkStateResult:
    """Adiabatically following dark state of the ansatz fields.

    psi = N (|-> - r|+> + i (2 N0^2 / Omega_+bar) dr/dtau |e>), r = Omega_-/Omega_+,
    N0 = (1 + rbar r)^{-1/2}, N = N0 exp(1/2 integral N0^2 (r drbar - rbar dr)).

    The factor ``i`` on the excited amplitude makes the ground amplitudes an
    exact solution of the Schrodinger equation for this Hamiltonian.

    ``gauge="auto"`` uses the form above where |Omega_+| >= |Omega_-| and
    otherwise its +/- exchanged twin, multiplied by the constant
    ``-exp(-i phi(xi_0))`` (xi_0 = xi at tau_ref) so both pieces describe
    the same state on the real axis.
    """
    tau = complex(tau) if np.iscomplexobj(tau) else float(tau)
    if gauge == "auto":
        f = build_fields(spec, zeta, tau)
        gauge = "plus" if abs(f.omega_plus) >= abs(f.omega_minus) else "minus"
    if gauge not in ("plus", "minus"):
        raise ValueError(f"unknown gauge {gauge!r}")
    swapped = gauge == "minus"
    state, n0, n_phase, n_bar_phase = _gauge_state(spec, zeta, tau, swapped)
    if swapped:
        xi0 = comoving_coordinate(spec, zeta, spec.tau_ref)
        c = -np.exp(-1j * spec.phi(xi0))
        state = tuple(c * x for x in state)
    return DarkStateResult(AtomicState(*state), n0, n_phase, n_bar_phase, gauge)


def dark_state_closed_form(spec: AdiabatonSpec, zeta, tau) -> AtomicState:
    """Ground amplitudes of the dark state on the real axis without quadrature.

    Under the ansatz the normalization phase integrates to
    phi_+(xi) - phi_+(xi_0), so psi = (-sin(Theta) e^{i phi_-}, cos(Theta) e^{i phi_+}) e^{-i phi_+(xi_0)}.
    The excited amplitude is returned with the same global phase.
    """
    p = profile(spec, zeta, tau)
    p0 = profile(spec, zeta, spec.tau_ref)
    g = np.exp(-1j * p0.phi_plus)
    dth = spec.theta.derivative(p.xi)
    dph = spec.phi.derivative(p.xi)
    # psi_e = i N 2 N0^2 / Omega_+bar * dr/dtau, expanded under the ansatz;
    # (2 / Omega) * dxi/dtau = -Omega / g
    psi_e = (
        -1j * p.omega / spec.g * np.exp(1j * (p.phi_plus + p.phi_minus)) * g
        * (dth - 1j * dph * np.sin(p.theta) * np.cos(p.theta))
    )
    return AtomicState(
        -np.sin(p.theta) * np.exp(1j * p.phi_minus) * g,
        np.cos(p.theta) * np.exp(1j * p.phi_plus) * g,
        psi_e,
    )


def excited_population_estimate(spec: AdiabatonSpec, xi, tau):
    """|psi_e|^2 = Omega^2/(4 g^2) [(2 Theta')^2 + phi'^2 sin^2(2 Theta)] on the real axis."""
    omega2 = np.abs(evaluate_envelope(spec.envelope, tau)) ** 2
    dth = spec.theta.derivative(xi)
    dph = spec.phi.derivative(xi)
    th = spec.theta(xi)
    return omega2 / (4.0 * spec.g**2) * ((2.0 * dth) ** 2 + dph**2 * np.sin(2.0 * th) ** 2)


def adiabaticity_ratio(omega: float, g: float, a: float) -> float:
    """Omega^2 c^2 / (g^2 a^2) with c = 1; small means the excited state stays empty."""
    return omega**2 / (g**2 * a**2)


__all__ = [
    "AdiabatonSpec",
    "DarkStateResult",
    "DomainError",
    "SingularRatioError",
    "accumulated_intensity",
    "adiabaticity_ratio",
    "build_fields",
    "comoving_coordinate",
    "dark_state",
    "dark_state_closed_form",
    "excited_population_estimate",
    "phase_sum",
    "profile",
]
