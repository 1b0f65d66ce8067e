"""Spin-1/2 in a slowly precessing field coupled to a bosonic bath.

Weak-coupling decay rates, Lamb-type shifts and the environment-induced
correction to the geometric phase, cross-validated against exact
propagation of a small discretized bath.
"""

from .adiabatic import (
    FieldProtocol,
    berry_connection,
    build_adiabatic_hamiltonian,
    build_lab_hamiltonian,
    effective_splitting,
    ideal_berry_phase,
    instantaneous_eigenstates,
    superposition_state,
)
from .bath import BathDiscretization, discretize_bath
from .bloch import (
    BlochGenerator,
    BlochTrajectory,
    PhaseResult,
    WindowReport,
    build_generator,
    check_adiabatic_window,
    evolve,
    evolve_exact,
    extract_phases,
    transverse_decay_rate,
)
from .errors import (
    BlangevinError,
    ConfigError,
    CrossCheckError,
    IntegratorError,
    NumericalError,
    QuadratureError,
    UnphysicalModelError,
)
from .oracle import (
    ComparisonReport,
    OracleResult,
    compare_with_langevin,
    propagate_exact,
    pure_dephasing_reference,
    thermal_initial_state,
)
from .spectral import (
    RateSet,
    SpectralModel,
    compute_rate_set,
    delta_lambda,
    delta_lambda_direct,
    delta_lambda_derivative,
    finite_part_integral,
    gamma_par,
    gamma_perp,
    gamma_perp_vac,
    lambda0,
    principal_value_integral,
    prob_virtual_transitions,
    spectral_weight,
    thermal_occupation,
    virtual_transition_kernel,
    xi_shift,
)

__version__ = "0.1.0"
