import math

import numpy as np
import pytest

from blangevin import (
    ConfigError,
    FieldProtocol,
    SpectralModel,
    berry_connection,
    build_adiabatic_hamiltonian,
    build_lab_hamiltonian,
    discretize_bath,
    effective_splitting,
    ideal_berry_phase,
    instantaneous_eigenstates,
    propagate_exact,
    superposition_state,
)
from blangevin.adiabatic import SIGMA_X, SIGMA_Z, hermiticity_defect


def small_bath(alpha=0.01, n_max=1, modes=2):
    m = SpectralModel("flat", alpha=alpha, omega_c=1.0)
    return discretize_bath(m, modes, "linear", n_max=n_max)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------


def test_protocol_derived_quantities():
    p = FieldProtocol(1.0, math.pi / 3.0, 0.01)
    assert p.omega0 == pytest.approx(0.995, rel=1e-14)
    assert p.period == pytest.approx(2.0 * math.pi / 0.01, rel=1e-14)
    assert p.phi(3.0) == pytest.approx(0.03, rel=1e-14)


def test_protocol_rejects_fast_drive():
    with pytest.raises(ConfigError):
        FieldProtocol(1.0, 0.5, 2.0)


def test_protocol_rejects_bad_angle():
    with pytest.raises(ConfigError):
        FieldProtocol(1.0, 4.0, 0.01)


def test_effective_splitting_examples():
    assert effective_splitting(FieldProtocol(1.0, math.pi / 3.0, 0.01)) == pytest.approx(0.995)
    assert effective_splitting(FieldProtocol(1.0, math.pi / 2.0, 0.01)) == pytest.approx(1.0)
    assert effective_splitting(FieldProtocol(1.0, 0.7, 0.0)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# eigenframe
# ---------------------------------------------------------------------------


def test_eigenstates_at_pole():
    up, down = instantaneous_eigenstates(0.0, 0.0)
    np.testing.assert_allclose(up, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(down, [0.0, -1.0], atol=1e-15)


def test_eigenstates_at_equator():
    up, _ = instantaneous_eigenstates(math.pi / 2.0, 0.0)
    np.testing.assert_allclose(up, np.array([1.0, 1.0]) / math.sqrt(2.0), atol=1e-15)


def test_eigenstates_orthonormal_random_angles():
    rng = np.random.default_rng(11)
    for _ in range(100):
        theta = rng.uniform(0.0, math.pi)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        up, down = instantaneous_eigenstates(theta, phi)
        assert abs(np.vdot(up, up) - 1.0) < 1e-14
        assert abs(np.vdot(down, down) - 1.0) < 1e-14
        assert abs(np.vdot(up, down)) < 1e-14
        # they diagonalize n.sigma with eigenvalues +1, -1
        n_sigma = (
            math.sin(theta) * math.cos(phi) * SIGMA_X
            + math.sin(theta) * math.sin(phi) * np.array([[0, -1j], [1j, 0]])
            + math.cos(theta) * SIGMA_Z
        )
        np.testing.assert_allclose(n_sigma @ up, up, atol=1e-13)
        np.testing.assert_allclose(n_sigma @ down, -down, atol=1e-13)


def test_eigenstate_continuity_along_sweep():
    theta = 1.1
    phis = np.arange(0.0, 2.0 * math.pi, 0.01)
    prev_up, prev_down = instantaneous_eigenstates(theta, phis[0])
    for phi in phis[1:]:
        up, down = instantaneous_eigenstates(theta, phi)
        assert np.vdot(prev_up, up).real > 0.0
        assert np.vdot(prev_down, down).real > 0.0
        prev_up, prev_down = up, down


def test_berry_connection_values():
    assert berry_connection(math.pi / 2.0, 0.01) == pytest.approx(0.0, abs=1e-18)
    assert berry_connection(0.0, 0.01) == pytest.approx(0.005, rel=1e-14)


def test_berry_connection_matches_finite_difference():
    theta, omega = 1.0, 0.01
    dt = 1e-6 / omega
    t0 = 7.0

    def states_at(t):
        return instantaneous_eigenstates(theta, omega * t)

    for idx, sign in ((0, 1.0), (1, -1.0)):  # the down state carries -1x
        v0 = states_at(t0)[idx]
        dv = (states_at(t0 + dt)[idx] - states_at(t0 - dt)[idx]) / (2.0 * dt)
        conn_fd = (1j * np.vdot(v0, dv)).real
        assert sign * berry_connection(theta, omega) == pytest.approx(conn_fd, rel=1e-6)


def test_ideal_berry_phase_values():
    assert ideal_berry_phase(0.0) == pytest.approx(2.0 * math.pi, rel=1e-15)
    assert abs(ideal_berry_phase(math.pi / 2.0)) < 1e-15
    assert ideal_berry_phase(math.pi / 3.0) == pytest.approx(math.pi, rel=1e-14)


# ---------------------------------------------------------------------------
# Hamiltonian builders
# ---------------------------------------------------------------------------


def test_lab_hamiltonian_bare_spin_eigenvalues():
    p = FieldProtocol(1.0, 0.9, 0.01)
    h = build_lab_hamiltonian(p, 0.4, None)
    np.testing.assert_allclose(np.linalg.eigvalsh(h), [-0.5, 0.5], atol=1e-14)


def test_lab_hamiltonian_cyclic():
    p = FieldProtocol(1.0, 0.9, 0.01)
    bath = small_bath()
    h0 = build_lab_hamiltonian(p, 0.0, bath).toarray()
    h_t = build_lab_hamiltonian(p, p.period, bath).toarray()
    np.testing.assert_allclose(h_t, h0, atol=1e-12)


def test_lab_hamiltonian_hermitian_random_parameters():
    rng = np.random.default_rng(3)
    bath = small_bath(alpha=0.05, n_max=2, modes=2)
    for _ in range(10):
        p = FieldProtocol(
            rng.uniform(0.5, 2.0), rng.uniform(0.0, math.pi), rng.uniform(0.0, 0.3)
        )
        h = build_lab_hamiltonian(p, rng.uniform(0.0, 100.0), bath)
        assert hermiticity_defect(h) <= 1e-12


def test_adiabatic_hamiltonian_polar_is_pure_dephasing():
    # theta = 0: coupling along sigma_z only, spin off-diagonal blocks vanish
    p = FieldProtocol(1.0, 0.0, 0.01)
    bath = small_bath()
    h = build_adiabatic_hamiltonian(p, bath).toarray()
    d = bath.hilbert_dimension
    assert np.max(np.abs(h[:d, d:])) == 0.0
    assert np.max(np.abs(h[d:, :d])) == 0.0


def test_adiabatic_hamiltonian_equatorial_is_transverse():
    # theta = pi/2: coupling is -sigma_x x (a + a^dag); spin-diagonal blocks
    # carry only the free parts
    p = FieldProtocol(1.0, math.pi / 2.0, 0.01)
    bath = small_bath()
    h = build_adiabatic_hamiltonian(p, bath).toarray()
    d = bath.hilbert_dimension
    coupling = bath.coupling_operator().toarray()
    np.testing.assert_allclose(h[:d, d:], -coupling, atol=1e-14)
    free = bath.bath_hamiltonian().toarray() + 0.5 * p.omega0 * np.eye(d)
    np.testing.assert_allclose(h[:d, :d], free, atol=1e-14)


def test_adiabatic_hamiltonian_bare_spin_eigenvalues():
    p = FieldProtocol(1.0, 0.9, 0.01)
    h = build_adiabatic_hamiltonian(p, None)
    np.testing.assert_allclose(
        np.linalg.eigvalsh(h), [-p.omega0 / 2.0, p.omega0 / 2.0], atol=1e-14
    )


def test_adiabatic_hamiltonian_time_independent():
    p = FieldProtocol(1.0, 0.9, 0.01)
    bath = small_bath()
    h1 = build_adiabatic_hamiltonian(p, bath)
    h2 = build_adiabatic_hamiltonian(p, bath)
    assert (h1 != h2).nnz == 0


# ---------------------------------------------------------------------------
# frame consistency
# ---------------------------------------------------------------------------


def test_frame_consistency_closed_system():
    """One lab-frame cycle accumulates the dynamical plus geometric phase.

    The tolerance 1e-6 (1 + b0 T) absorbs the physical O(Omega^2) excess of
    the exact evolution over the adiabatic prediction omega0 T.
    """
    p = FieldProtocol(1.0, 1.0, 1e-3)
    psi0 = superposition_state(p.theta)
    res = propagate_exact(p, None, psi0, 400_000)
    expected = p.omega0 * p.period  # = b0 T - 2 pi cos(theta)
    tol = 1e-6 * (1.0 + p.b0 * p.period)
    diff = (res.final_phase - expected + math.pi) % (2.0 * math.pi) - math.pi
    assert abs(diff) <= tol
