"""Bath spectral-weight models and the decay-rate / energy-shift integrals.

Everything here is expressed in units where the static field magnitude sets
the frequency scale.  The single input is the spectral weight J(w) (mode
density times squared coupling); all rates and shifts are functionals of it:

* ``gamma_perp``   pi * J(w0) * (2 n(w0) + 1)          energy exchange at resonance
* ``gamma_par``    pi * lim_{w->0+} J(w) (2 n(w) + 1)  zero-frequency dephasing
* ``lambda0``      PV integral of J (2n+1) [1/(w0-w) + 1/(w0+w)]
* ``delta_lambda`` drive-induced first-order correction to lambda0
* ``xi_shift``     PV integral of J [2/w - 1/(w0-w) + 1/(w0+w)]
* ``prob_virtual_transitions``  sin^2(theta) times the double-pole kernel

Principal-value and Hadamard finite-part integrals are evaluated by
singularity subtraction: the pole is removed analytically and the smooth
remainder goes to an adaptive quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, CrossCheckError, QuadratureError, UnphysicalModelError

# Adaptive quadrature tolerances (absolute / relative).
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8

# Relative distance (w.r.t. interval length) below which a pole is treated
# as sitting on an endpoint.
_ENDPOINT_GUARD = 1e-9

SPECTRAL_KINDS = ("flat", "ohmic", "lorentzian")


def thermal_occupation(beta: float, omega: float) -> float:
    """Mean bosonic occupation 1/(exp(beta*omega) - 1); beta=inf encodes T=0.

    Raises ConfigError for omega <= 0 at finite beta; callers that need the
    w -> 0 limit must take it themselves.
    """
    if math.isinf(beta):
        return 0.0
    if omega <= 0.0:
        raise ConfigError(f"thermal occupation needs omega > 0, got {omega}")
    x = beta * omega
    # n = e^-x / (1 - e^-x), stable for large x
    e = math.exp(-x)
    return e / (-math.expm1(-x))


def _thermal_factor(beta: float, omega: float) -> float:
    """2 n + 1, the symmetrized thermal weight."""
    if math.isinf(beta):
        return 1.0
    return 1.0 + 2.0 * thermal_occupation(beta, omega)


@dataclass(frozen=True)
class SpectralModel:
    """Bath spectral weight J(w) on the support [0, omega_c].

    kind:
        "flat"        J = alpha
        "ohmic"       J = alpha * w
        "lorentzian"  J = alpha * (width/pi) / ((w - center)^2 + width^2)
    alpha:    overall coupling strength (J >= 0 requires alpha >= 0)
    omega_c:  hard cutoff; J vanishes outside [0, omega_c]
    beta:     inverse temperature, math.inf for T = 0
    center, width: lorentzian peak position and half width
    """

    kind: str
    alpha: float
    omega_c: float
    beta: float = math.inf
    center: Optional[float] = None
    width: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SPECTRAL_KINDS:
            raise ConfigError(
                f"unknown spectral model kind {self.kind!r}; expected one of {SPECTRAL_KINDS}"
            )
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.omega_c > 0:
            raise ConfigError(f"omega_c must be > 0, got {self.omega_c}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0 (use math.inf for T=0), got {self.beta}")
        if self.kind == "lorentzian":
            if self.center is None or self.width is None:
                raise ConfigError("lorentzian model needs 'center' and 'width'")
            if not self.width > 0:
                raise ConfigError(f"lorentzian width must be > 0, got {self.width}")

    def weight(self, omega):
        """Spectral weight J(omega); accepts scalars or arrays."""
        w = np.asarray(omega, dtype=float)
        inside = (w >= 0.0) & (w <= self.omega_c)
        if self.kind == "flat":
            j = np.where(inside, self.alpha, 0.0)
        elif self.kind == "ohmic":
            j = np.where(inside, self.alpha * w, 0.0)
        else:
            lor = (self.width / math.pi) / ((w - self.center) ** 2 + self.width**2)
            j = np.where(inside, self.alpha * lor, 0.0)
        return float(j) if np.isscalar(omega) else j

    def weight_at_zero(self) -> tuple[float, float]:
        """(J(0+), dJ/dw(0+)); used for the w -> 0 limits of the integrands."""
        if self.kind == "flat":
            return self.alpha, 0.0
        if self.kind == "ohmic":
            return 0.0, self.alpha
        j0 = self.alpha * (self.width / math.pi) / (self.center**2 + self.width**2)
        slope = (
            self.alpha
            * (self.width / math.pi)
            * 2.0
            * self.center
            / (self.center**2 + self.width**2) ** 2
        )
        return j0, slope

    def thermal_weight(self, omega: float) -> float:
        """J(w) * (2 n(w) + 1) as a scalar integrand."""
        j = self.weight(float(omega))
        if j == 0.0:
            return 0.0
        return j * _thermal_factor(self.beta, float(omega))


def spectral_weight(model: SpectralModel, omega) -> float:
    """Functional form of J(omega) for the given model."""
    return model.weight(omega)


def _require_thermal_ir_ok(model: SpectralModel, what: str) -> None:
    """Thermal shift integrands carry J(w)*2n(w) ~ 2 J(w)/(beta w) near w=0.

    That is log-divergent whenever J(0+) > 0 at finite temperature.
    """
    if math.isinf(model.beta):
        return
    j0, _ = model.weight_at_zero()
    if j0 > 0.0:
        raise UnphysicalModelError(
            f"{what} diverges at finite temperature for the {model.kind} model: "
            f"J(0+) = {j0:g} > 0 makes the thermal integrand ~ 1/w near zero"
        )


# ---------------------------------------------------------------------------
# Singular quadrature
# ---------------------------------------------------------------------------


def _quad(f, a, b, epsabs, epsrel, what) -> float:
    val, err = quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=200)
    if not math.isfinite(val):
        raise QuadratureError(f"{what}: non-finite quadrature result on [{a}, {b}]")
    if err > max(epsabs, abs(val) * epsrel) * 1e3:
        raise QuadratureError(
            f"{what}: quadrature error estimate {err:g} too large for value {val:g}"
        )
    return val


def principal_value_integral(
    integrand: Callable[[float], float],
    pole: float,
    a: float,
    b: float,
    epsabs: float = QUAD_EPSABS,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """Cauchy principal value of integral_a^b f(w) / (pole - w) dw.

    The pole is removed by subtraction,

        P int f(w)/(p-w) dw
            = int [f(w) - f(p)] / (p-w) dw  +  f(p) * ln|(p-a)/(p-b)|,

    the first term being regular at w = p.  A pole outside [a, b] degrades
    to plain quadrature of the untouched integrand.
    """
    if not b > a:
        raise ConfigError(f"empty integration interval [{a}, {b}]")
    guard = _ENDPOINT_GUARD * (b - a)
    if min(abs(pole - a), abs(pole - b)) < guard:
        raise QuadratureError(
            f"pole {pole} within quadrature tolerance of an endpoint of [{a}, {b}]"
        )
    if pole < a or pole > b:
        return _quad(
            lambda w: integrand(w) / (pole - w), a, b, epsabs, epsrel, "PV (pole outside)"
        )

    fp = integrand(pole)
    h = 1e-7 * max(abs(pole), b - a)
    near = 1e-12 * (b - a)

    def subtracted(w: float) -> float:
        d = pole - w
        if abs(d) < near:
            # removable point: limit is -f'(pole)
            return -(integrand(pole + h) - integrand(pole - h)) / (2.0 * h)
        return (integrand(w) - fp) / d

    val = _quad(subtracted, a, pole, epsabs, epsrel, "PV left")
    val += _quad(subtracted, pole, b, epsabs, epsrel, "PV right")
    val += fp * math.log(abs((pole - a) / (pole - b)))
    return val


def finite_part_integral(
    integrand: Callable[[float], float],
    pole: float,
    a: float,
    b: float,
    epsabs: float = QUAD_EPSABS,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """Hadamard finite part of integral_a^b f(w) / (pole - w)^2 dw.

    Second-order subtraction leaves a remainder that is regular at the pole:

        FP int f/(p-w)^2 = int [f(w) - f(p) - f'(p)(w-p)] / (p-w)^2 dw
                           + f(p) * [1/(p-b) - 1/(p-a)]
                           + f'(p) * ln|(p-b)/(p-a)|.
    """
    if not b > a:
        raise ConfigError(f"empty integration interval [{a}, {b}]")
    guard = _ENDPOINT_GUARD * (b - a)
    if min(abs(pole - a), abs(pole - b)) < guard:
        raise QuadratureError(
            f"pole {pole} within quadrature tolerance of an endpoint of [{a}, {b}]"
        )
    if pole < a or pole > b:
        return _quad(
            lambda w: integrand(w) / (pole - w) ** 2, a, b, epsabs, epsrel,
            "finite part (pole outside)",
        )

    h = 1e-6 * max(abs(pole), b - a)
    fp = integrand(pole)
    fp1 = (integrand(pole + h) - integrand(pole - h)) / (2.0 * h)
    fp2 = (integrand(pole + h) - 2.0 * fp + integrand(pole - h)) / h**2
    near = 1e-9 * (b - a)

    def subtracted(w: float) -> float:
        d = w - pole
        if abs(d) < near:
            return 0.5 * fp2
        return (integrand(w) - fp - fp1 * d) / d**2

    val = _quad(subtracted, a, pole, epsabs, epsrel, "FP left")
    val += _quad(subtracted, pole, b, epsabs, epsrel, "FP right")
    val += fp * (1.0 / (pole - b) - 1.0 / (pole - a))
    val += fp1 * math.log(abs((pole - b) / (pole - a)))
    return val


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def gamma_perp(model: SpectralModel, omega0: float) -> float:
    """Transverse decay rate pi * J(w0) * (2 n(w0) + 1); zero off support."""
    if not omega0 > 0.0:
        raise ConfigError(f"gamma_perp needs omega0 > 0, got {omega0}")
    if omega0 >= model.omega_c:
        return 0.0
    return math.pi * model.weight(omega0) * _thermal_factor(model.beta, omega0)


def gamma_perp_vac(model: SpectralModel, omega0: float) -> float:
    """Vacuum part of gamma_perp (thermal occupation set to zero)."""
    if not omega0 > 0.0:
        raise ConfigError(f"gamma_perp_vac needs omega0 > 0, got {omega0}")
    if omega0 >= model.omega_c:
        return 0.0
    return math.pi * model.weight(omega0)


def gamma_par(model: SpectralModel) -> float:
    """Dephasing rate pi * lim_{w->0+} J(w) * (2 n(w) + 1).

    The boundary delta is taken with full weight via the one-sided limit.
    At T = 0 the limit is pi * J(0+).  At finite temperature
    J(w)(2n+1) -> 2 J'(0+)/beta provided J(0+) = 0; a nonzero J(0+) makes
    the limit diverge like 1/w.
    """
    if model.alpha == 0.0:
        return 0.0
    j0, slope = model.weight_at_zero()
    if math.isinf(model.beta):
        return math.pi * j0
    if j0 > 0.0:
        raise UnphysicalModelError(
            f"gamma_par diverges for the {model.kind} model at finite temperature: "
            f"J(0+) = {j0:g} > 0 gives a 1/w limit"
        )
    return 2.0 * math.pi * slope / model.beta


# ---------------------------------------------------------------------------
# Shifts
# ---------------------------------------------------------------------------


def lambda0(
    model: SpectralModel,
    b0: float,
    epsabs: float = QUAD_EPSABS,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """Static level shift int J (2n+1) [P/(b0-w) + 1/(b0+w)] dw over [0, w_c]."""
    if not b0 > 0.0:
        raise ConfigError(f"lambda0 needs b0 > 0, got {b0}")
    if model.alpha == 0.0:
        return 0.0
    _require_thermal_ir_ok(model, "lambda0")
    f = model.thermal_weight
    resonant = principal_value_integral(f, b0, 0.0, model.omega_c, epsabs, epsrel)
    antiresonant = _quad(
        lambda w: f(w) / (b0 + w), 0.0, model.omega_c, epsabs, epsrel, "lambda0 antiresonant"
    )
    return resonant + antiresonant


def virtual_transition_kernel(
    model: SpectralModel,
    b0: float,
    epsabs: float = QUAD_EPSABS,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """int J (2n+1) [1/(b0-w)^2 + 1/(b0+w)^2] dw, finite part across the pole.

    This single integral feeds both delta_lambda (times Omega cos(theta))
    and prob_virtual_transitions (times sin^2(theta)).
    """
    if not b0 > 0.0:
        raise ConfigError(f"virtual_transition_kernel needs b0 > 0, got {b0}")
    if model.alpha == 0.0:
        return 0.0
    _require_thermal_ir_ok(model, "virtual_transition_kernel")
    f = model.thermal_weight
    resonant = finite_part_integral(f, b0, 0.0, model.omega_c, epsabs, epsrel)
    antiresonant = _quad(
        lambda w: f(w) / (b0 + w) ** 2, 0.0, model.omega_c, epsabs, epsrel,
        "virtual kernel antiresonant",
    )
    return resonant + antiresonant


def delta_lambda_direct(
    model: SpectralModel, b0: float, omega_drive: float, theta: float
) -> float:
    """Drive correction as the explicit double-pole integral (method a)."""
    if omega_drive == 0.0:
        return 0.0
    return omega_drive * math.cos(theta) * virtual_transition_kernel(model, b0)


def delta_lambda_derivative(
    model: SpectralModel,
    b0: float,
    omega_drive: float,
    theta: float,
    step: float = 1e-4,
) -> float:
    """Drive correction as -Omega cos(theta) d(lambda0)/dw0 at w0 = b0 (method b).

    Central difference with step h = step * b0.
    """
    if omega_drive == 0.0:
        return 0.0
    h = step * b0
    dlam = (lambda0(model, b0 + h) - lambda0(model, b0 - h)) / (2.0 * h)
    return -omega_drive * math.cos(theta) * dlam


def delta_lambda(
    model: SpectralModel,
    b0: float,
    omega_drive: float,
    theta: float,
    method: str = "derivative",
    cross_check: bool = True,
    check_tol: float = 1e-3,
) -> float:
    """First-order drive correction to the level shift.

    Two routes are implemented: the derivative of lambda0 (method
    "derivative", the default) and the direct finite-part integral
    (method "direct").  With cross_check=True both are evaluated and a
    relative disagreement beyond check_tol raises CrossCheckError carrying
    the two values.
    """
    if method not in ("derivative", "direct"):
        raise ConfigError(f"unknown delta_lambda method {method!r}")
    if omega_drive == 0.0:
        return 0.0
    primary = (
        delta_lambda_derivative(model, b0, omega_drive, theta)
        if method == "derivative"
        else delta_lambda_direct(model, b0, omega_drive, theta)
    )
    if cross_check:
        other = (
            delta_lambda_direct(model, b0, omega_drive, theta)
            if method == "derivative"
            else delta_lambda_derivative(model, b0, omega_drive, theta)
        )
        scale = max(abs(primary), abs(other))
        if scale > 0.0 and abs(primary - other) > check_tol * scale:
            raise CrossCheckError(
                "delta_lambda methods disagree: "
                f"derivative-of-lambda0 = {primary if method == 'derivative' else other:.12g}, "
                f"finite-part integral = {other if method == 'derivative' else primary:.12g}"
            )
    return primary


def xi_shift(
    model: SpectralModel,
    omega0: float,
    omega_min: Optional[float] = None,
    epsabs: float = QUAD_EPSABS,
    epsrel: float = QUAD_EPSREL,
) -> float:
    """Identity-channel shift int J [2/w - P/(w0-w) + 1/(w0+w)] dw.

    The 2/w term requires J(w)/w integrable at zero.  Models with
    J(0+) > 0 get an infrared floor omega_min (default 1e-6 * omega0) and
    a loud diagnostic; the result then depends logarithmically on the floor.
    """
    if not omega0 > 0.0:
        raise ConfigError(f"xi_shift needs omega0 > 0, got {omega0}")
    if model.alpha == 0.0:
        return 0.0
    j0, _ = model.weight_at_zero()
    lo = 0.0
    if j0 > 0.0:
        if omega_min is None:
            omega_min = 1e-6 * omega0
        if not 0.0 < omega_min < model.omega_c:
            raise ConfigError(f"infrared floor {omega_min} outside (0, omega_c)")
        warnings.warn(
            f"{model.kind} spectral weight has J(0+) = {j0:g} > 0; the 2/w term in "
            f"xi_shift is infrared divergent and is cut at omega_min = {omega_min:g}",
            stacklevel=2,
        )
        lo = omega_min
    j = model.weight
    soft = _quad(lambda w: 2.0 * j(w) / w, lo, model.omega_c, epsabs, epsrel, "xi 2/w term")
    resonant = principal_value_integral(j, omega0, lo, model.omega_c, epsabs, epsrel)
    antiresonant = _quad(
        lambda w: j(w) / (omega0 + w), lo, model.omega_c, epsabs, epsrel, "xi antiresonant"
    )
    return soft - resonant + antiresonant


def prob_virtual_transitions(model: SpectralModel, b0: float, theta: float) -> float:
    """Virtual-transition probability sin^2(theta) * virtual_transition_kernel.

    The sharp-cutoff finite part can turn negative once the pole sits well
    inside the support; that is flagged with a warning since the quantity
    is meant to be a probability.
    """
    s2 = math.sin(theta) ** 2
    if s2 == 0.0 or model.alpha == 0.0:
        return 0.0
    value = s2 * virtual_transition_kernel(model, b0)
    if value < 0.0:
        warnings.warn(
            f"prob_virtual_transitions = {value:g} < 0: the finite-part regularization "
            "of the double-pole kernel is not positive for this model",
            stacklevel=2,
        )
    return value


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateSet:
    """All rates and shifts for one (SpectralModel, FieldProtocol) pair.

    gamma_perp, gamma_perp_vac and xi are evaluated at the effective
    splitting w0; lambda0, delta_lambda and prob_vt at the static field b0.
    gamma_perp_at_b0 records the b0-evaluated rate as a diagnostic for the
    adiabatic insensitivity of the decay timescale.
    """

    gamma_perp: float
    gamma_perp_vac: float
    gamma_par: float
    lambda0: float
    delta_lambda: float
    xi: float
    prob_vt: float
    gamma_perp_at_b0: float = 0.0

    def __post_init__(self):
        fields = (
            self.gamma_perp, self.gamma_perp_vac, self.gamma_par,
            self.lambda0, self.delta_lambda, self.xi, self.prob_vt,
        )
        if not all(math.isfinite(x) for x in fields):
            raise ConfigError(f"non-finite entries in RateSet: {self}")
        tol = 1e-12 * max(self.gamma_perp, 1.0)
        if self.gamma_perp_vac < -tol or self.gamma_perp < self.gamma_perp_vac - tol:
            raise ConfigError(
                f"rate ordering violated: gamma_perp={self.gamma_perp} < "
                f"gamma_perp_vac={self.gamma_perp_vac}"
            )
        if self.gamma_par < 0.0:
            raise ConfigError(f"gamma_par must be >= 0, got {self.gamma_par}")

    @property
    def lambda_total(self) -> float:
        """lambda0 + delta_lambda, the shift entering the averaged equations."""
        return self.lambda0 + self.delta_lambda

    @classmethod
    def zero(cls) -> "RateSet":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def compute_rate_set(model: SpectralModel, protocol) -> RateSet:
    """Evaluate every rate and shift for the given drive protocol."""
    w0 = protocol.omega0
    b0 = protocol.b0
    if model.alpha == 0.0:
        return RateSet.zero()
    return RateSet(
        gamma_perp=gamma_perp(model, w0),
        gamma_perp_vac=gamma_perp_vac(model, w0),
        gamma_par=gamma_par(model),
        lambda0=lambda0(model, b0),
        delta_lambda=delta_lambda(model, b0, protocol.omega_drive, protocol.theta),
        xi=xi_shift(model, w0, omega_min=1e-6 * b0 if model.weight_at_zero()[0] > 0 else None),
        prob_vt=prob_virtual_transitions(model, b0, protocol.theta),
        gamma_perp_at_b0=gamma_perp(model, b0),
    )
