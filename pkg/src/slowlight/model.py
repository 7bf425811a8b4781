"""Value types, analytic envelope/shape families and the Lambda-atom Hamiltonian.

Units: c = 1, so retarded time ``tau = t - z`` and depth ``zeta = z`` both
carry time units and the coupling ``g`` carries frequency squared.

Barred quantities are the analytic continuation of the complex conjugate.
For a closed-form family with real parameters this is the Schwarz
reflection ``conj(f(conj(tau)))``, which coincides with ``conj(f(tau))``
only on the real axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import erf

ArrayLike = Union[complex, float, np.ndarray]


class DomainError(ValueError):
    """Evaluation at a singular point of an analytic family."""


ENVELOPE_FAMILIES = (
    "constant",
    "gaussian-dip",
    "tanh-ramp",
    "lorentzian-hump",
    "raised-cosine-gate",
)
SHAPE_FAMILIES = ("constant", "tanh-kink", "gaussian-bump", "linear", "arctan-tanh")


# --------------------------------------------------------------------------
# Value types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldPair:
    """Rabi frequencies (plus, minus) and their continued conjugates.

    Entries may be scalars or broadcast-compatible arrays.
    """

    omega_plus: ArrayLike
    omega_minus: ArrayLike
    omega_plus_bar: ArrayLike
    omega_minus_bar: ArrayLike

    @classmethod
    def real_time(cls, omega_plus, omega_minus) -> "FieldPair":
        """Fields on the real axis, where barred entries are plain conjugates."""
        return cls(omega_plus, omega_minus, np.conj(omega_plus), np.conj(omega_minus))

    @property
    def total_intensity(self):
        return (
            self.omega_plus_bar * self.omega_plus
            + self.omega_minus_bar * self.omega_minus
        )


@dataclass(frozen=True)
class AtomicState:
    """Amplitudes of one atom's pure state on |+>, |->, |e>."""

    psi_plus: ArrayLike
    psi_minus: ArrayLike
    psi_e: ArrayLike

    @classmethod
    def from_array(cls, vec) -> "AtomicState":
        vec = np.asarray(vec, dtype=complex)
        return cls(vec[..., 0], vec[..., 1], vec[..., 2])

    def as_array(self) -> np.ndarray:
        return np.stack(
            np.broadcast_arrays(
                np.asarray(self.psi_plus, dtype=complex),
                np.asarray(self.psi_minus, dtype=complex),
                np.asarray(self.psi_e, dtype=complex),
            ),
            axis=-1,
        )

    @property
    def norm_squared(self):
        return (
            np.abs(self.psi_plus) ** 2
            + np.abs(self.psi_minus) ** 2
            + np.abs(self.psi_e) ** 2
        )


PLUS = AtomicState(1.0, 0.0, 0.0)
MINUS = AtomicState(0.0, 1.0, 0.0)
EXCITED = AtomicState(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class MediumParams:
    """Coupling ``g`` (frequency^2) and optional excited-state decay rate."""

    g: float
    gamma_e: float = 0.0

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError(f"g must be >= 0, got {self.g}")
        if not self.gamma_e >= 0:
            raise ValueError(f"gamma_e must be >= 0, got {self.gamma_e}")


@dataclass(frozen=True)
class SimulationGrid:
    tau_min: float
    tau_max: float
    n_tau: int
    zeta_min: float
    zeta_max: float
    n_zeta: int

    def __post_init__(self):
        if self.n_tau < 2 or self.n_zeta < 2:
            raise ValueError("grid needs at least 2 nodes in each direction")
        if not self.tau_max > self.tau_min:
            raise ValueError("tau_max must exceed tau_min")
        if not self.zeta_max > self.zeta_min:
            raise ValueError("zeta_max must exceed zeta_min")

    @property
    def tau(self) -> np.ndarray:
        return np.linspace(self.tau_min, self.tau_max, self.n_tau)

    @property
    def zeta(self) -> np.ndarray:
        return np.linspace(self.zeta_min, self.zeta_max, self.n_zeta)

    @property
    def dtau(self) -> float:
        return (self.tau_max - self.tau_min) / (self.n_tau - 1)

    @property
    def dzeta(self) -> float:
        return (self.zeta_max - self.zeta_min) / (self.n_zeta - 1)

    def scaled(self, factor: float) -> "SimulationGrid":
        """Grid with the step counts multiplied by ``factor`` (same extent)."""
        return SimulationGrid(
            self.tau_min,
            self.tau_max,
            int(round((self.n_tau - 1) * factor)) + 1,
            self.zeta_min,
            self.zeta_max,
            int(round((self.n_zeta - 1) * factor)) + 1,
        )


@dataclass(frozen=True)
class LossParams:
    """Inputs of the spontaneous-emission loss estimate.

    ``density_param`` is the dimensionless n*lambda**3; the rest are lengths.
    """

    wavelength: float
    density_param: float
    pulse_scale: float
    propagation_length: float

    def __post_init__(self):
        for name in ("wavelength", "density_param", "pulse_scale", "propagation_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


# --------------------------------------------------------------------------
# Envelope families Omega(tau)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeSpec:
    """Closed-form total envelope Omega(tau) with real parameters.

    Families (``u = (tau - center) / width``):

    * ``constant``: ``amplitude``
    * ``gaussian-dip``: ``amplitude * (1 - depth * exp(-u**2))``
    * ``tanh-ramp``: ``amplitude * (offset + tanh(u))``
    * ``lorentzian-hump``: ``amplitude * sqrt(1 + u**power)`` (``power`` even)
    * ``raised-cosine-gate``: ``amplitude`` outside the gate, a raised-cosine
      ramp of duration ``width`` starting at ``center``, exactly zero for
      ``window`` time units, then the mirrored ramp back up.

    The gate is piecewise; at complex ``tau`` the piece selected by
    ``Re(tau)`` is continued, so it has no global continuation.
    """

    family: str
    amplitude: float = 1.0
    width: float = 1.0
    center: float = 0.0
    depth: float = 1.0
    offset: float = 0.0
    power: int = 2
    window: float = 0.0

    def __post_init__(self):
        if self.family not in ENVELOPE_FAMILIES:
            raise ValueError(f"unknown envelope family {self.family!r}")
        if not self.width > 0:
            raise ValueError("envelope width must be > 0")
        if self.family == "lorentzian-hump" and (self.power < 2 or self.power % 2):
            raise ValueError("lorentzian-hump power must be an even integer >= 2")
        if self.window < 0:
            raise ValueError("gate window must be >= 0")

    @property
    def analytic(self) -> bool:
        return self.family != "raised-cosine-gate"


def _u(spec, tau):
    return (np.asarray(tau) - spec.center) / spec.width


def _finite(value, spec, tau):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{spec.family} envelope is singular near tau={tau!r}")
    return value


def _gate_pieces(spec, tau):
    """Masks and local phases of the raised-cosine gate, selected by Re(tau)."""
    x = np.real(tau)
    t0 = spec.center
    t1 = t0 + spec.width
    t2 = t1 + spec.window
    t3 = t2 + spec.width
    down = (x > t0) & (x < t1)
    dark = (x >= t1) & (x <= t2)
    up = (x > t2) & (x < t3)
    return down, dark, up, t0, t2


def envelope_squared(spec: EnvelopeSpec, tau: ArrayLike):
    """Omega(tau)**2, entire for every analytic family except tanh-ramp."""
    tau = np.asarray(tau, dtype=complex if np.iscomplexobj(tau) else float)
    a2 = spec.amplitude**2
    if spec.family == "lorentzian-hump":
        return a2 * (1.0 + _u(spec, tau) ** spec.power)
    return evaluate_envelope(spec, tau) ** 2


def envelope_squared_derivative(spec: EnvelopeSpec, tau: ArrayLike):
    """d/dtau of Omega(tau)**2 in closed form."""
    tau = np.asarray(tau)
    u = _u(spec, tau)
    a, w = spec.amplitude, spec.width
    if spec.family == "constant":
        return np.zeros_like(u) * a
    if spec.family == "gaussian-dip":
        e = np.exp(-(u**2))
        return 2.0 * a**2 * (1.0 - spec.depth * e) * spec.depth * e * 2.0 * u / w
    if spec.family == "tanh-ramp":
        t = np.tanh(u)
        return _finite(2.0 * a**2 * (spec.offset + t) * (1.0 - t**2) / w, spec, tau)
    if spec.family == "lorentzian-hump":
        p = spec.power
        return a**2 * p * u ** (p - 1) / w
    omega = evaluate_envelope(spec, tau)
    down, _, up, t0, t2 = _gate_pieces(spec, tau)
    d = np.zeros_like(omega)
    k = np.pi / w
    d = np.where(down, -a * 0.5 * k * np.sin(k * (tau - t0)), d)
    d = np.where(up, a * 0.5 * k * np.sin(k * (tau - t2)), d)
    return 2.0 * omega * d


def evaluate_envelope(spec: EnvelopeSpec, tau: ArrayLike):
    """Exact closed-form Omega(tau); real for real tau.

    Raises DomainError at the branch points of lorentzian-hump and at the
    poles of tanh-ramp.
    """
    complex_in = np.iscomplexobj(tau)
    tau = np.asarray(tau, dtype=complex if complex_in else float)
    u = _u(spec, tau)
    a = spec.amplitude
    if spec.family == "constant":
        out = np.full_like(u, a)
    elif spec.family == "gaussian-dip":
        out = a * ((1.0 - spec.depth) - spec.depth * np.expm1(-(u**2)))
    elif spec.family == "tanh-ramp":
        with np.errstate(all="ignore"):
            out = _finite(a * (spec.offset + np.tanh(u)), spec, tau)
    elif spec.family == "lorentzian-hump":
        s = 1.0 + u**spec.power
        if np.any(s == 0):
            raise DomainError(f"lorentzian-hump branch point at tau={tau!r}")
        out = a * np.sqrt(s)
    else:
        down, dark, up, t0, t2 = _gate_pieces(spec, tau)
        k = np.pi / spec.width
        out = np.full_like(u, a)
        out = np.where(down, a * 0.5 * (1.0 + np.cos(k * (tau - t0))), out)
        out = np.where(dark, 0.0 * out, out)
        out = np.where(up, a * 0.5 * (1.0 - np.cos(k * (tau - t2))), out)
    return out[()] if out.ndim == 0 else out


def continue_conjugate(spec: EnvelopeSpec, tau: ArrayLike):
    """The barred envelope: conj(Omega(conj(tau)))."""
    if spec.family == "lorentzian-hump" and np.iscomplexobj(tau):
        # reflect the radicand we already have: recomputing it at conj(tau)
        # can flip the signed zero on the cut and land on the other branch
        s = 1.0 + _u(spec, np.asarray(tau, dtype=complex)) ** spec.power
        if np.any(s == 0):
            raise DomainError(f"lorentzian-hump branch point at tau={tau!r}")
        out = spec.amplitude * np.conj(np.sqrt(np.conj(s)))
        return out[()] if out.ndim == 0 else out
    return np.conj(evaluate_envelope(spec, np.conj(tau)))


def envelope_antiderivative(spec: EnvelopeSpec, tau: ArrayLike):
    """Closed-form primitive of Omega**2, or None when the family has none here.

    Only the difference of two values is meaningful.
    """
    tau_arr = np.asarray(tau)
    u = _u(spec, tau_arr)
    a2, w = spec.amplitude**2, spec.width
    if spec.family == "constant":
        return a2 * tau_arr
    if spec.family == "gaussian-dip":
        d = spec.depth
        sp = math.sqrt(math.pi)
        return a2 * (
            tau_arr
            - 2.0 * d * w * sp / 2.0 * erf(u)
            + d**2 * w * sp / (2.0 * math.sqrt(2.0)) * erf(math.sqrt(2.0) * u)
        )
    if spec.family == "lorentzian-hump":
        p = spec.power
        return a2 * (tau_arr + w * u ** (p + 1) / (p + 1))
    if spec.family == "tanh-ramp" and spec.offset == 0.0:
        with np.errstate(all="ignore"):
            return _finite(a2 * w * (u - np.tanh(u)), spec, tau)
    if spec.family == "raised-cosine-gate" and not np.iscomplexobj(tau_arr):
        return a2 * _gate_primitive(spec, tau_arr)
    return None


def _tanh_path_integral(u0, u, n=257):
    """integral of tanh along the straight segment u0 -> u.

    The real part is log|cosh| (overflow-safe); the imaginary part is the arg
    of cosh tracked along the segment, so the result is the value on that
    contour and not just some branch of log(cosh).
    """
    u0, u = np.broadcast_arrays(np.asarray(u0, dtype=complex), np.asarray(u, dtype=complex))

    def log_abs_cosh(w):
        x, y = np.abs(w.real), w.imag
        e = np.exp(-2.0 * x)
        return x - math.log(2.0) + 0.5 * np.log((1.0 - e) ** 2 + 4.0 * e * np.cos(y) ** 2)

    s = np.linspace(0.0, 1.0, n).reshape((n,) + (1,) * u.ndim)
    w = u0 + s * (u - u0)
    arg = np.unwrap(np.arctan2(np.tanh(w.real) * np.sin(w.imag), np.cos(w.imag)), axis=0)
    return log_abs_cosh(u) - log_abs_cosh(u0) + 1j * (arg[-1] - arg[0])


def tanh_ramp_path_integral(spec: EnvelopeSpec, tau_ref, tau):
    """integral of Omega**2 for tanh-ramp along straight contours from ``tau_ref``.

    With an offset the poles carry residues, so the value depends on the
    contour; this is the straight-segment one, in closed form.
    """
    c, w = spec.offset, spec.width
    u0, u = _u(spec, tau_ref), _u(spec, tau)
    with np.errstate(all="ignore"):
        # (c + tanh)^2 = c^2 + 1 + 2c tanh - sech^2
        val = (c * c + 1.0) * (u - u0) + 2.0 * c * _tanh_path_integral(u0, u) - (np.tanh(u) - np.tanh(u0))
    return _finite(spec.amplitude**2 * w * val, spec, tau)


def _gate_primitive(spec, tau):
    """Primitive of (Omega/amplitude)**2 for the gate, zero at the gate start."""
    w, W = spec.width, spec.window
    t0 = spec.center
    k = math.pi / w

    def ramp_down(s):  # integral_0^s of (1+cos(kx))^2/4
        return (1.5 * s + 2.0 * np.sin(k * s) / k + np.sin(2 * k * s) / (4 * k)) / 4.0

    def ramp_up(s):  # integral_0^s of (1-cos(kx))^2/4
        return (1.5 * s - 2.0 * np.sin(k * s) / k + np.sin(2 * k * s) / (4 * k)) / 4.0

    full = ramp_down(w)
    x = tau - t0
    out = np.where(x <= 0, x, 0.0)
    out = np.where((x > 0) & (x < w), ramp_down(np.clip(x, 0, w)), out)
    out = np.where(x >= w, full, out)
    s = x - w - W
    out = np.where((s > 0) & (s < w), full + ramp_up(np.clip(s, 0, w)), out)
    out = np.where(s >= w, 2 * full + (s - w), out)
    return out


# --------------------------------------------------------------------------
# Shape families Theta(xi), phi(xi)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeSpec:
    """Closed-form profile f(xi) with exact derivative.

    ``u = (xi - center) / width``:

    * ``constant``: ``amplitude``
    * ``tanh-kink``: ``amplitude/2 * (1 + tanh(u))``
    * ``gaussian-bump``: ``amplitude * exp(-u**2)``
    * ``linear``: ``amplitude * u``
    * ``arctan-tanh``: ``amplitude * arctan(tanh(u))``
    """

    family: str = "constant"
    amplitude: float = 0.0
    width: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        if self.family not in SHAPE_FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}")
        if not self.width > 0:
            raise ValueError("shape width must be > 0")

    @property
    def is_constant(self) -> bool:
        return self.family == "constant" or self.amplitude == 0.0

    def __call__(self, xi):
        u = (np.asarray(xi) - self.center) / self.width
        A = self.amplitude
        if self.family == "constant":
            out = np.full_like(u, A, dtype=u.dtype if np.iscomplexobj(u) else float)
        elif self.family == "tanh-kink":
            out = 0.5 * A * (1.0 + np.tanh(u))
        elif self.family == "gaussian-bump":
            out = A * np.exp(-(u**2))
        elif self.family == "linear":
            out = A * u
        else:
            out = A * np.arctan(np.tanh(u))
        return out[()] if np.ndim(out) == 0 else out

    def derivative(self, xi):
        u = (np.asarray(xi) - self.center) / self.width
        A, w = self.amplitude, self.width
        if self.family == "constant":
            out = np.zeros_like(u, dtype=u.dtype if np.iscomplexobj(u) else float)
        elif self.family == "tanh-kink":
            out = 0.5 * A / w / np.cosh(u) ** 2
        elif self.family == "gaussian-bump":
            out = -2.0 * A * u / w * np.exp(-(u**2))
        elif self.family == "linear":
            out = np.full_like(u, A / w, dtype=u.dtype if np.iscomplexobj(u) else float)
        else:
            t = np.tanh(u)
            out = A / w * (1.0 - t**2) / (1.0 + t**2)
        return out[()] if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Hamiltonian and loss estimate
# --------------------------------------------------------------------------


def hamiltonian_apply(fields: FieldPair, state: AtomicState) -> AtomicState:
    """H|psi> for the resonant Lambda Hamiltonian in the interaction picture."""
    return AtomicState(
        -0.5 * fields.omega_plus_bar * state.psi_e,
        -0.5 * fields.omega_minus_bar * state.psi_e,
        -0.5 * (fields.omega_plus * state.psi_plus + fields.omega_minus * state.psi_minus),
    )


def hamiltonian_matrix(fields: FieldPair) -> np.ndarray:
    """Matrix of H in the basis (|+>, |->, |e>); broadcasts over array fields."""
    op, om, opb, omb = np.broadcast_arrays(
        *(np.asarray(x, dtype=complex) for x in
          (fields.omega_plus, fields.omega_minus, fields.omega_plus_bar, fields.omega_minus_bar))
    )
    H = np.zeros(op.shape + (3, 3), dtype=complex)
    H[..., 0, 2] = -0.5 * opb
    H[..., 1, 2] = -0.5 * omb
    H[..., 2, 0] = -0.5 * op
    H[..., 2, 1] = -0.5 * om
    return H


def loss_rate(params: LossParams) -> float:
    """Spontaneous-emission loss over a propagation length.

    ``32*pi/(n*lambda**3) * l*lambda/a**2``.
    """
    return (
        32.0 * math.pi / params.density_param
        * params.propagation_length * params.wavelength / params.pulse_scale**2
    )
