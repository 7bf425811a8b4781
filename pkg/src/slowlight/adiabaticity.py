"""Spectral and complex-time analysis of the Lambda system.

Levels cross where the total intensity Omegabar_+ Omega_+ + Omegabar_- Omega_-
vanishes. For ansatz fields this intensity is Omega(tau)**2 whatever the
polarization profile, so the crossings of the coupled solution are the
zeros of the envelope. Zeros on the real axis are degenerate (the whole
Hamiltonian vanishes there) and mix nothing; complex zeros would govern
Landau-Zener tunneling through exp(-|Im integral (E_+ - E_-) dtau|).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .adiabaton import AdiabatonSpec, build_fields
from .model import (
    AtomicState,
    DomainError,
    EnvelopeSpec,
    FieldPair,
    envelope_squared,
    envelope_squared_derivative,
    evaluate_envelope,
)
from .quadrature import gauss_legendre

logger = logging.getLogger(__name__)

REAL_AXIS_TOL = 1e-10


class UndefinedFidelityError(ValueError):
    """Both fields vanish, every state is degenerate."""


class BranchAmbiguityError(ValueError):
    """The tunneling contour meets another crossing or a pole."""


@dataclass(frozen=True)
class CrossingPoint:
    tau_c: complex
    multiplicity: int
    residual: float
    degenerate: bool = False

    @property
    def note(self) -> str:
        return "degenerate: no mixing" if self.degenerate else "complex crossing"


@dataclass(frozen=True)
class Strip:
    """Search region Re(tau) in [re_min, re_max], |Im(tau)| <= half_height."""

    re_min: float
    re_max: float
    half_height: float

    @classmethod
    def around(cls, envelope: EnvelopeSpec, re_half_width: Optional[float] = None,
               half_height: Optional[float] = None) -> "Strip":
        """Default strip: +-8T in Re around the center, |Im| <= 4T."""
        T = envelope.width
        rw = 8.0 * T if re_half_width is None else re_half_width
        h = 4.0 * T if half_height is None else half_height
        return cls(envelope.center - rw, envelope.center + rw, h)

    def contains(self, z, pad: float = 0.0):
        return (
            (np.real(z) >= self.re_min - pad)
            & (np.real(z) <= self.re_max + pad)
            & (np.abs(np.imag(z)) <= self.half_height + pad)
        )


class CrossingList(list):
    """Crossings found, plus a description of the searched region."""

    def __init__(self, items=(), searched: Optional[dict] = None):
        super().__init__(items)
        self.searched = searched or {}


@dataclass(frozen=True)
class TunnelingResult:
    amplitude_magnitude: float
    exponent: float
    contour: tuple = field(repr=False)
    degenerate: bool = False
    note: str = ""


# --------------------------------------------------------------------------
# spectrum and fidelity
# --------------------------------------------------------------------------


def instantaneous_eigenvalues(fields: FieldPair):
    """(E0, E+, E-) = (0, +sqrt(I)/2, -sqrt(I)/2), principal square root."""
    root = np.sqrt(np.asarray(fields.total_intensity, dtype=complex))
    e_plus = 0.5 * root
    return 0.0 * root, e_plus, -e_plus


def dark_state_fidelity_array(op, om, psi) -> np.ndarray:
    """|<d|psi>|^2 / <psi|psi> with |d> the normalized null vector Omega_-|+> - Omega_+|->."""
    op = np.asarray(op, dtype=complex)
    om = np.asarray(om, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    inten = np.abs(op) ** 2 + np.abs(om) ** 2
    overlap = np.conj(om) * psi[..., 0] - np.conj(op) * psi[..., 1]
    return np.abs(overlap) ** 2 / (inten * np.sum(np.abs(psi) ** 2, axis=-1))


def dark_state_fidelity(fields: FieldPair, state: AtomicState) -> float:
    """Overlap of ``state`` with the zero-eigenvalue ground-manifold direction."""
    inten = np.abs(fields.omega_plus) ** 2 + np.abs(fields.omega_minus) ** 2
    if np.any(inten == 0):
        raise UndefinedFidelityError("fidelity undefined where both fields vanish")
    fid = dark_state_fidelity_array(fields.omega_plus, fields.omega_minus, state.as_array())
    return fid[()] if np.ndim(fid) == 0 else fid


# --------------------------------------------------------------------------
# root search
# --------------------------------------------------------------------------


def _newton(f, df, z, max_iter=200, tol=1e-11, inside=None):
    """Vectorized Newton; seeds leaving ``inside`` (a mask function) are dropped as NaN."""
    z = np.array(z, dtype=complex)
    active = np.ones(z.shape, dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            if not np.any(active):
                break
            za = z[active]
            step = f(za) / df(za)
            bad = ~np.isfinite(step)
            step[bad] = 0.0
            znew = za - step
            znew[bad] = np.nan
            z[active] = znew
            if inside is not None:
                gone = ~bad & ~inside(znew)
                znew[gone] = np.nan
                bad |= gone
            done = bad | (np.abs(step) <= tol * np.maximum(1.0, np.abs(znew)))
            idx = np.flatnonzero(active)
            active[idx[done]] = False
    return z


def _multiplicity(f, df, z0, radius, n=64):
    """Zeros of f inside a small circle, by the argument principle.

    None when f is not finite and nonzero on the circle (overflow or
    underflow), i.e. the candidate cannot be resolved in floating point.
    """
    t = np.exp(2j * np.pi * np.arange(n) / n)
    pts = z0 + radius * t
    with np.errstate(all="ignore"):
        integrand = df(pts) / f(pts) * radius * t
    if not np.all(np.isfinite(integrand)):
        return None
    return int(round(float(np.real(np.mean(integrand)))))


def _polish(f, df, z, m, iters=30):
    """Modified Newton for a root of multiplicity m; never accepts a step that raises |f|."""
    with np.errstate(all="ignore"):
        fz = abs(f(np.array([z]))[0])
        for _ in range(iters):
            step = m * f(z) / df(z)
            if not np.isfinite(step) or step == 0:
                break
            trial = z - step
            ft = abs(f(np.array([trial]))[0])
            if not ft <= fz:
                break
            z, fz = trial, ft
            if abs(step) <= 1e-16 * max(1.0, abs(z)):
                break
    return z


def find_roots(f: Callable, df: Callable, strip: Strip, length_scale: float, value_scale: float,
               n_re: int = 64, n_im: int = 16) -> CrossingList:
    """Newton search for zeros of an analytic ``f`` seeded on a strip lattice."""
    re = np.linspace(strip.re_min, strip.re_max, n_re)
    im = np.linspace(-strip.half_height, strip.half_height, n_im)
    seeds = (re[None, :] + 1j * im[:, None]).ravel()
    margin = 0.5 * max(strip.re_max - strip.re_min, 2 * strip.half_height)
    z = _newton(f, df, seeds, inside=lambda w: strip.contains(w, margin))
    pad = 1e-6 * length_scale
    with np.errstate(all="ignore"):
        ok = np.isfinite(z) & strip.contains(z, pad)
        fz = np.where(ok, np.abs(f(np.where(ok, z, 0))), np.inf)
    ok &= fz <= 1e-8 * value_scale
    cands = z[ok]
    searched = {
        "re_min": strip.re_min,
        "re_max": strip.re_max,
        "half_height": strip.half_height,
        "n_seeds": int(seeds.size),
        "n_converged": int(cands.size),
    }
    roots: list[complex] = []
    for c in sorted(cands, key=lambda w: (round(w.real / length_scale, 6), w.imag)):
        if all(abs(c - r) > 1e-6 * length_scale for r in roots):
            roots.append(complex(c))
    out = []
    n_unresolved = 0
    for k, r in enumerate(roots):
        others = [abs(r - q) for j, q in enumerate(roots) if j != k]
        radius = min([1e-3 * length_scale] + [0.4 * d for d in others])
        m = _multiplicity(f, df, r, radius)
        if not m:
            n_unresolved += 1
            continue
        r = complex(_polish(f, df, r, m))
        if abs(r.imag) <= REAL_AXIS_TOL * max(1.0, length_scale):
            r_snap = complex(r.real, 0.0)
            if abs(f(np.array([r_snap]))[0]) <= abs(f(np.array([r]))[0]) * 10 + 1e-300:
                r = r_snap
        res = float(abs(f(np.array([r]))[0]))
        out.append(CrossingPoint(r, m, res, degenerate=abs(r.imag) <= REAL_AXIS_TOL * max(1.0, length_scale)))
    final: list[CrossingPoint] = []
    for c in sorted(out, key=lambda c: (c.tau_c.real, c.tau_c.imag)):
        if all(abs(c.tau_c - q.tau_c) > 1e-8 * length_scale for q in final):
            final.append(c)
    searched["n_roots"] = len(final)
    searched["n_unresolved"] = n_unresolved
    if n_unresolved:
        logger.warning("%d root candidates dropped: f not finite and nonzero around them", n_unresolved)
    if not final:
        logger.info("no crossings in strip %s", searched)
    return CrossingList(final, searched)


def locate_crossings(envelope: EnvelopeSpec, strip: Optional[Strip] = None,
                     n_re: int = 64, n_im: int = 16) -> CrossingList:
    """Zeros of Omega(tau)**2 in a strip of the complex tau plane."""
    if not envelope.analytic:
        raise ValueError(f"{envelope.family} is piecewise and has no global continuation")
    strip = strip or Strip.around(envelope)
    return find_roots(
        lambda t: envelope_squared(envelope, t),
        lambda t: envelope_squared_derivative(envelope, t),
        strip,
        envelope.width,
        envelope.amplitude**2,
        n_re,
        n_im,
    )


# --------------------------------------------------------------------------
# Landau-Zener exponent
# --------------------------------------------------------------------------


def _continuous_sqrt(values, start):
    """Square roots of ``values`` chosen node by node to stay continuous from ``start``."""
    out = np.sqrt(values.astype(complex))
    prev = start
    for k in range(out.size):
        if abs(out[k] - prev) > abs(-out[k] - prev):
            out[k] = -out[k]
        prev = out[k]
    return out


def _contour_integral(envelope, tau_c, tau_r, n):
    """integral_{tau_c}^{tau_r} Omega dtau with tau = tau_c + (tau_r - tau_c) u^2."""
    u, w = gauss_legendre(n)
    order = np.argsort(-u)
    u, w = u[order], w[order]
    h = tau_r - tau_c
    taus = tau_c + h * u**2
    sq = envelope_squared(envelope, taus)
    start = complex(evaluate_envelope(envelope, tau_r.real))
    omega = _continuous_sqrt(np.asarray(sq), start)
    return complex(np.sum(w * omega * 2.0 * u * h)), taus


def _check_contour(envelope, tau_c, tau_r, n=513):
    t = np.linspace(0.0, 1.0, n)[1:]
    pts = tau_c + (tau_r - tau_c) * t
    try:
        with np.errstate(all="ignore"):
            vals = envelope_squared(envelope, pts)
    except DomainError as exc:
        raise BranchAmbiguityError(f"contour from {tau_c} meets a pole: {exc}") from None
    if not np.all(np.isfinite(vals)):
        k = int(np.argmax(~np.isfinite(vals)))
        raise BranchAmbiguityError(f"contour from {tau_c} meets a pole near tau={pts[k]}")
    mag = np.abs(vals)
    scale = envelope.amplitude**2
    interior = np.flatnonzero((mag[1:-1] < mag[:-2]) & (mag[1:-1] < mag[2:])) + 1
    for k in interior:
        if mag[k] < 1e-2 * scale:
            z = _polish(
                lambda x: envelope_squared(envelope, x),
                lambda x: envelope_squared_derivative(envelope, x),
                complex(pts[k]), 1,
            )
            seg = tau_r - tau_c
            s = ((z - tau_c) * np.conj(seg)).real / abs(seg) ** 2
            dist = abs(z - (tau_c + np.clip(s, 0, 1) * seg))
            if abs(z - tau_c) > 1e-6 * envelope.width and dist < 1e-6 * envelope.width:
                raise BranchAmbiguityError(f"contour from {tau_c} passes through another crossing at {z}")


def lz_amplitude(envelope: EnvelopeSpec, crossing: CrossingPoint, n_nodes: int = 64) -> TunnelingResult:
    """Tunneling exponent |Im integral_{tau_c}^{Re tau_c} (E_+ - E_-) dtau| and exp(-exponent)."""
    tau_c = complex(crossing.tau_c)
    res = abs(complex(envelope_squared(envelope, tau_c)))
    if res > 1e-8 * envelope.amplitude**2:
        raise ValueError(f"{tau_c} is not a crossing of this envelope (|Omega^2| = {res:.3e})")
    if crossing.degenerate or abs(tau_c.imag) <= REAL_AXIS_TOL * max(1.0, envelope.width):
        return TunnelingResult(1.0, 0.0, (tau_c,), True, "degenerate: no mixing")
    tau_r = complex(tau_c.real, 0.0)
    _check_contour(envelope, tau_c, tau_r)
    value, nodes = _contour_integral(envelope, tau_c, tau_r, n_nodes)
    exponent = abs(value.imag)
    return TunnelingResult(float(np.exp(-exponent)), float(exponent), tuple(nodes), False, "")


# --------------------------------------------------------------------------
# superadiabaticity check
# --------------------------------------------------------------------------


def assembled_intensity(spec: AdiabatonSpec, zeta: float, tau):
    """Omegabar_+ Omega_+ + Omegabar_- Omega_- of the ansatz fields at complex tau."""
    return build_fields(spec, zeta, tau).total_intensity


def crossing_immunity_check(spec: AdiabatonSpec, strip: Optional[Strip] = None,
                            zetas: Sequence[float] = (0.0, 1.0), n_re: int = 64, n_im: int = 16,
                            search_fields: bool = True) -> dict:
    """Compare the crossings of the coupled solution with the zeros of the envelope.

    Reports the largest relative deviation of the assembled intensity from
    Omega(tau)**2 on the strip lattice, the envelope crossings, and (when
    ``search_fields``) the crossings found by searching the assembled
    intensity itself at each ``zeta``.
    """
    env = spec.envelope
    strip = strip or Strip.around(env)
    T = env.width
    re = np.linspace(strip.re_min, strip.re_max, n_re)
    im = np.linspace(-strip.half_height, strip.half_height, n_im)
    lattice = (re[None, :] + 1j * im[:, None]).ravel()
    lattice = lattice[np.abs(envelope_squared(env, lattice)) < np.inf]

    max_dev = 0.0
    n_skipped = 0
    with np.errstate(all="ignore"):
        target = envelope_squared(env, lattice)
        for z in zetas:
            got = assembled_intensity(spec, z, lattice)
            ok = np.isfinite(got) & np.isfinite(target)
            n_skipped += int(np.sum(~ok))
            scale = np.maximum(np.abs(target[ok]), env.amplitude**2)
            if np.any(ok):
                max_dev = max(max_dev, float(np.max(np.abs(got[ok] - target[ok]) / scale)))

    env_roots = locate_crossings(env, strip, n_re, n_im)
    report = {
        "max_relative_deviation": max_dev,
        "n_lattice_points": int(lattice.size * len(zetas)),
        "n_nonfinite_skipped": n_skipped,
        "envelope_crossings": list(env_roots),
        "searched": env_roots.searched,
        "all_real_degenerate": all(c.degenerate for c in env_roots if abs(c.tau_c.imag) <= REAL_AXIS_TOL * max(1.0, T)),
    }
    if search_fields:
        h = 1e-6 * T
        field_sets = {}
        max_dist = 0.0
        matched = True
        n_unresolved = 0
        for z in zetas:
            f = lambda t, z=z: assembled_intensity(spec, z, t)  # noqa: E731
            df = lambda t, f=f: (f(t + h) - f(t - h) + 1j * (f(t - 1j * h) - f(t + 1j * h))) / (4 * h)  # noqa: E731
            roots = find_roots(f, df, strip, T, env.amplitude**2, n_re, n_im)
            field_sets[z] = list(roots)
            n_unresolved += roots.searched.get("n_unresolved", 0)
            d, ok = _match(roots, env_roots)
            matched &= ok
            max_dist = max(max_dist, d)
        report.update(field_crossings=field_sets, sets_match=matched, max_pair_distance=max_dist,
                      n_unresolved_candidates=n_unresolved)
    return report


def _match(a: Sequence[CrossingPoint], b: Sequence[CrossingPoint]):
    if len(a) != len(b):
        return float("inf"), False
    used = set()
    worst = 0.0
    for p in a:
        d = [(abs(p.tau_c - q.tau_c), j) for j, q in enumerate(b) if j not in used]
        if not d:
            return float("inf"), False
        dist, j = min(d)
        used.add(j)
        worst = max(worst, dist)
    return worst, True
