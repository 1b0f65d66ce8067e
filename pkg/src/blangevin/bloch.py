"""Averaged spin dynamics: affine generator, integration, phase decomposition.

With sn = sin(theta), cs = cos(theta), the environment-averaged equations
for s_z and s_+ = (s_x + i s_y)/2 read

    ds_z/dt = -2 sn^2 (gp s_z + gpv) - 2 sin(2 theta) gpar (s_+ + s_-)
    ds_+/dt = i w0 s_+ + (sin(2 theta)/2) [2 (i xi - gpv) - (i lam + gp) s_z]
              + sn^2 [(i lam - gp) s_+ - (i lam + gp) s_-]
              - 4 cs^2 gpar s_+

with lam = lambda0 + delta_lambda and the s_- equation the complex
conjugate.  On the real Cartesian components this is ds/dt = A s + b:

    A = [[-2 sn^2 gp - 4 cs^2 gpar,  -(w0 + 2 sn^2 lam),  -sin(2 theta) gp ],
         [ w0,                        -4 cs^2 gpar,        -sin(2 theta) lam],
         [-2 sin(2 theta) gpar,       0,                   -2 sn^2 gp       ]]
    b = [-2 sin(2 theta) gpv,  2 sin(2 theta) xi,  -2 sn^2 gpv]

The coherent shift lands only on the x row; the resulting elliptical
precession advances the phase of s_+ at w0 + sn^2 lam to first order,
exactly as the complex form does.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adiabatic import FieldProtocol, ideal_berry_phase
from .errors import ConfigError, IntegratorError
from .spectral import (
    RateSet,
    SpectralModel,
    gamma_perp,
    lambda0 as lambda0_integral,
    prob_virtual_transitions,
)


@dataclass(frozen=True)
class BlochGenerator:
    """Affine generator ds/dt = A s + b on (s_x, s_y, s_z)."""

    a_matrix: np.ndarray
    b_vector: np.ndarray
    omega0: float
    theta: float
    rates: RateSet

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_vector, dtype=float)
        if a.shape != (3, 3) or b.shape != (3,):
            raise ConfigError("generator must be a 3x3 matrix and a 3-vector")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConfigError("generator entries must be finite")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_vector", b)

    @property
    def rate_scale(self) -> float:
        r = self.rates
        return max(
            self.omega0, r.gamma_perp, r.gamma_perp_vac, r.gamma_par,
            abs(r.lambda_total), abs(r.xi),
        )

    def transverse_fixed_point(self) -> complex:
        """Stationary s_+ of the (s_x, s_y) subsystem at the initial s_z.

        Used to center phase extraction: the identity drive displaces the
        precession axis, and arg(s_+) measured about the origin wobbles by
        |s_+*| unless the offset is removed.  Valid when s_z is (nearly)
        conserved, i.e. weak damping.
        """
        a2 = self.a_matrix[:2, :2]
        rhs = -self.b_vector[:2]
        try:
            sx, sy = np.linalg.solve(a2, rhs)
        except np.linalg.LinAlgError:
            return 0.0 + 0.0j
        return 0.5 * (sx + 1j * sy)


def build_generator(rates: RateSet, omega0: float, theta: float) -> BlochGenerator:
    """Assemble the affine generator from a RateSet."""
    if not omega0 > 0:
        raise ConfigError(f"omega0 must be > 0, got {omega0}")
    s2 = math.sin(theta) ** 2
    c2 = math.cos(theta) ** 2
    s2t = math.sin(2.0 * theta)
    gp, gpv, gpar = rates.gamma_perp, rates.gamma_perp_vac, rates.gamma_par
    lam, xi = rates.lambda_total, rates.xi
    a = np.array(
        [
            [-2.0 * s2 * gp - 4.0 * c2 * gpar, -(omega0 + 2.0 * s2 * lam), -s2t * gp],
            [omega0, -4.0 * c2 * gpar, -s2t * lam],
            [-2.0 * s2t * gpar, 0.0, -2.0 * s2 * gp],
        ]
    )
    b = np.array([-2.0 * s2t * gpv, 2.0 * s2t * xi, -2.0 * s2 * gpv])
    return BlochGenerator(a, b, omega0=omega0, theta=theta, rates=rates)


@dataclass
class BlochTrajectory:
    """Sampled solution of the averaged equations."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    record_every: int = 1

    def s_plus(self) -> np.ndarray:
        return 0.5 * (self.states[:, 0] + 1j * self.states[:, 1])

    def s_plus_abs(self) -> np.ndarray:
        return np.abs(self.s_plus())

    def arg_s_plus(self, center: complex = 0.0 + 0.0j) -> np.ndarray:
        """Unwrapped arg of s_+(t), optionally about a displaced center.

        Unwrapping needs the recorded phase step below pi: with the step-size
        precondition (omega0 dt <= 0.01) any record_every below ~300 is safe.
        """
        return np.unwrap(np.angle(self.s_plus() - center))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def evolve(
    gen: BlochGenerator,
    s0,
    t_final: float,
    dt: float,
    record_every: int = 1,
) -> BlochTrajectory:
    """Fixed-step classical RK4 integration of ds/dt = A s + b.

    For a constant affine system the RK4 update collapses to the fixed
    affine map s -> M s + v with M the degree-4 Taylor polynomial of
    exp(dt A); iterating that map is the RK4 iteration.
    """
    if not t_final > 0:
        raise ConfigError(f"t_final must be > 0, got {t_final}")
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    if dt > 0.01 / gen.rate_scale:
        raise IntegratorError(
            f"dt = {dt:g} violates dt <= 0.01 / max(omega0, rates) = "
            f"{0.01 / gen.rate_scale:g}"
        )
    s = np.asarray(s0, dtype=float).copy()
    if s.shape != (3,):
        raise ConfigError("s0 must be a 3-vector")

    def rk4_map(h):
        ha = h * gen.a_matrix
        eye = np.eye(3)
        inner = eye + ha @ (eye / 2.0 + ha @ (eye / 6.0 + ha / 24.0))
        return eye + ha @ inner, h * (inner @ gen.b_vector)

    n_full = int(t_final / dt + 1e-9)
    t_tail = t_final - n_full * dt
    if t_tail < 1e-12 * dt:
        t_tail = 0.0
    m, v = rk4_map(dt)

    times = [0.0]
    states = [s.copy()]
    for k in range(1, n_full + 1):
        s = m @ s + v
        if k % record_every == 0 or (k == n_full and t_tail == 0.0):
            times.append(k * dt)
            states.append(s.copy())
    if t_tail > 0.0:
        m_tail, v_tail = rk4_map(t_tail)
        s = m_tail @ s + v_tail
        times.append(t_final)
        states.append(s.copy())
    states = np.array(states)
    if not np.all(np.isfinite(states)):
        raise IntegratorError("non-finite state produced during integration")
    return BlochTrajectory(np.array(times), states, dt=dt, record_every=record_every)


def evolve_exact(gen: BlochGenerator, s0, times) -> BlochTrajectory:
    """Exact affine solution via eigendecomposition of A (cross-validation).

    s(t) = V e^{L t} V^{-1} s0 + V phi(L, t) V^{-1} b with
    phi(l, t) = (e^{l t} - 1)/l and the l -> 0 limit t.
    """
    times = np.asarray(times, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    evals, vecs = np.linalg.eig(gen.a_matrix)
    vinv = np.linalg.inv(vecs)
    c0 = vinv @ s0
    cb = vinv @ gen.b_vector
    small = np.abs(evals) <= 1e-14
    denom = np.where(small, 1.0, evals)
    out = np.empty((times.size, 3))
    for i, t in enumerate(times):
        el = np.exp(evals * t)
        phi = np.where(small, t, (el - 1.0) / denom)
        s = vecs @ (el * c0) + vecs @ (phi * cb)
        if np.max(np.abs(s.imag)) > 1e-9 * max(1.0, np.max(np.abs(s.real))):
            raise IntegratorError("eigendecomposition solution has large imaginary residue")
        out[i] = s.real
    return BlochTrajectory(times, out, dt=float(times[1] - times[0]) if times.size > 1 else 0.0)


def transverse_decay_rate(rates: RateSet, theta: float) -> float:
    """Co-rotating damping of s_+: sin^2(theta) gamma_perp + 4 cos^2(theta) gamma_par."""
    return math.sin(theta) ** 2 * rates.gamma_perp + 4.0 * math.cos(theta) ** 2 * rates.gamma_par


def fit_decay_rate(times, amplitudes) -> float:
    """Least-squares exponential rate from |s_+| samples (positive = decay)."""
    t = np.asarray(times, dtype=float)
    a = np.asarray(amplitudes, dtype=float)
    keep = a > 1e-300
    if np.count_nonzero(keep) < 2:
        raise ConfigError("not enough nonzero samples to fit a decay rate")
    slope = np.polyfit(t[keep], np.log(a[keep]), 1)[0]
    return -float(slope)


# ---------------------------------------------------------------------------
# Adiabatic window and phase decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowReport:
    """Ordering report for gamma_perp << Omega << omega0 with a margin factor."""

    gamma_perp: float
    omega_drive: float
    omega0: float
    margin: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"ADIABATIC WINDOW: {status} "
            f"(gamma_perp={self.gamma_perp:.6g} | Omega={self.omega_drive:.6g} "
            f"| omega0={self.omega0:.6g}, margin x{self.margin:g})"
        )


def check_adiabatic_window(
    rates: RateSet, protocol: FieldProtocol, margin: float = 10.0
) -> WindowReport:
    """Check gamma_perp * margin <= Omega and Omega * margin <= omega0."""
    return WindowReport(
        gamma_perp=rates.gamma_perp,
        omega_drive=protocol.omega_drive,
        omega0=protocol.omega0,
        margin=margin,
        lower_ok=rates.gamma_perp * margin <= protocol.omega_drive,
        upper_ok=protocol.omega_drive * margin <= protocol.omega0,
    )


@dataclass(frozen=True)
class PhaseResult:
    """Cycle phase split into dynamical and geometric parts.

    phi_total = phi_d + phi_g holds exactly by construction;
    correction_fraction is the virtual-transition probability, so
    phi_g = 2 pi cos(theta) (1 - correction_fraction).
    """

    phi_d: float
    phi_g: float
    phi_total: float
    phi_berry_ideal: float
    correction_fraction: float
    window: Optional[WindowReport] = None
    protocol: Optional[FieldProtocol] = None


def extract_phases(model: SpectralModel, protocol: FieldProtocol) -> PhaseResult:
    """Dynamical and geometric phase over one cycle T = 2 pi / Omega.

    phi_d = [b0 + sin^2(theta) lambda0(b0)] T, with the thermal factor kept
    inside lambda0; phi_g = 2 pi cos(theta) (1 - Prob_vt).  A failed
    adiabatic window attaches a warning but the result is still returned.
    """
    if protocol.omega_drive == 0.0:
        raise ConfigError("phase extraction needs a cyclic drive (Omega > 0)")
    theta = protocol.theta
    t_cycle = protocol.period
    lam0 = lambda0_integral(model, protocol.b0) if model.alpha else 0.0
    pvt = prob_virtual_transitions(model, protocol.b0, theta) if model.alpha else 0.0
    phi_d = (protocol.b0 + math.sin(theta) ** 2 * lam0) * t_cycle
    phi_g = ideal_berry_phase(theta) * (1.0 - pvt)
    gp = gamma_perp(model, protocol.omega0) if model.alpha else 0.0
    window = WindowReport(
        gamma_perp=gp,
        omega_drive=protocol.omega_drive,
        omega0=protocol.omega0,
        margin=10.0,
        lower_ok=gp * 10.0 <= protocol.omega_drive,
        upper_ok=protocol.omega_drive * 10.0 <= protocol.omega0,
    )
    if not window.passed:
        warnings.warn(window.summary(), stacklevel=2)
    return PhaseResult(
        phi_d=phi_d,
        phi_g=phi_g,
        phi_total=phi_d + phi_g,
        phi_berry_ideal=ideal_berry_phase(theta),
        correction_fraction=pvt,
        window=window,
        protocol=protocol,
    )
