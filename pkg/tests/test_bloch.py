import math

import numpy as np
import pytest

from blangevin import (
    ConfigError,
    FieldProtocol,
    IntegratorError,
    RateSet,
    SpectralModel,
    build_generator,
    check_adiabatic_window,
    compute_rate_set,
    evolve,
    evolve_exact,
    extract_phases,
    prob_virtual_transitions,
    thermal_occupation,
    transverse_decay_rate,
)
from blangevin.bloch import fit_decay_rate


def rate_set(**kw):
    base = dict(
        gamma_perp=0.0, gamma_perp_vac=0.0, gamma_par=0.0,
        lambda0=0.0, delta_lambda=0.0, xi=0.0, prob_vt=0.0,
    )
    base.update(kw)
    return RateSet(**base)


# ---------------------------------------------------------------------------
# generator structure
# ---------------------------------------------------------------------------


def test_zero_rates_is_free_precession():
    gen = build_generator(RateSet.zero(), omega0=0.7, theta=0.9)
    a_expected = 0.7 * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(gen.a_matrix, a_expected, atol=1e-15)
    np.testing.assert_allclose(gen.b_vector, 0.0, atol=1e-15)


def test_polar_generator_reduces_to_precession_plus_dephasing():
    # theta = 0: s_z conserved, s_+ damped at 4 gamma_par, no drives
    rs = rate_set(gamma_perp=0.1, gamma_perp_vac=0.05, gamma_par=0.02,
                  lambda0=0.3, xi=0.4)
    gen = build_generator(rs, omega0=1.0, theta=0.0)
    np.testing.assert_allclose(gen.a_matrix[2], 0.0, atol=1e-15)
    np.testing.assert_allclose(gen.b_vector, 0.0, atol=1e-15)
    assert gen.a_matrix[0, 0] == pytest.approx(-4.0 * 0.02)
    assert gen.a_matrix[1, 1] == pytest.approx(-4.0 * 0.02)
    # without gamma_par only the omega0 rotation remains
    gen2 = build_generator(rate_set(gamma_perp=0.1, gamma_perp_vac=0.05,
                                    lambda0=0.3, xi=0.4), omega0=1.0, theta=0.0)
    free = build_generator(RateSet.zero(), omega0=1.0, theta=0.0)
    np.testing.assert_allclose(gen2.a_matrix, free.a_matrix, atol=1e-15)


def test_equatorial_sz_equation():
    # theta = pi/2: ds_z/dt = -2 (gamma_perp s_z + gamma_perp_vac)
    rs = rate_set(gamma_perp=0.2, gamma_perp_vac=0.1, gamma_par=0.03)
    gen = build_generator(rs, omega0=1.0, theta=math.pi / 2.0)
    np.testing.assert_allclose(gen.a_matrix[2], [0.0, 0.0, -0.4], atol=1e-15)
    assert gen.b_vector[2] == pytest.approx(-0.2, abs=1e-15)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def test_half_turn_precession():
    gen = build_generator(RateSet.zero(), omega0=1.0, theta=0.5)
    traj = evolve(gen, [1.0, 0.0, 0.0], math.pi, math.pi / 1000.0)
    np.testing.assert_allclose(traj.states[-1], [-1.0, 0.0, 0.0], atol=1e-10)
    assert traj.times[-1] == pytest.approx(math.pi, abs=1e-12)


def test_step_size_precondition():
    gen = build_generator(RateSet.zero(), omega0=1.0, theta=0.5)
    with pytest.raises(IntegratorError):
        evolve(gen, [0.0, 0.0, 1.0], 1.0, 0.5)


def test_zero_rate_generator_conserves_norm_per_cycle():
    gen = build_generator(RateSet.zero(), omega0=1.0, theta=0.5)
    traj = evolve(gen, [0.6, 0.0, 0.8], 2.0 * math.pi, 0.005)
    assert np.max(np.abs(traj.norms() - 1.0)) <= 1e-12


def test_rk4_matches_exact_affine_solution():
    m = SpectralModel("ohmic", alpha=1e-3, omega_c=10.0, beta=5.0)
    p = FieldProtocol(1.0, math.pi / 4.0, 0.05)
    rates = compute_rate_set(m, p)
    gen = build_generator(rates, p.omega0, p.theta)
    traj = evolve(gen, [0.0, 0.0, 1.0], p.period, 0.005, record_every=20)
    exact = evolve_exact(gen, [0.0, 0.0, 1.0], traj.times)
    assert np.max(np.abs(traj.states - exact.states)) <= 1e-8


def test_thermal_fixed_point():
    beta = 1.0
    m = SpectralModel("ohmic", alpha=1e-3, omega_c=10.0, beta=beta)
    p = FieldProtocol(1.0, math.pi / 2.0, 0.01)
    rates = compute_rate_set(m, p)
    gen = build_generator(rates, p.omega0, p.theta)
    n_bar = thermal_occupation(beta, p.omega0)
    t_relax = 24.0 / (2.0 * rates.gamma_perp)
    traj = evolve(gen, [0.0, 0.0, 1.0], t_relax, 0.008, record_every=1000)
    assert traj.states[-1, 2] == pytest.approx(-1.0 / (2.0 * n_bar + 1.0), abs=1e-9)


def test_transverse_decay_rate_limits():
    rs = rate_set(gamma_perp=0.3, gamma_par=0.05)
    assert transverse_decay_rate(rs, math.pi / 2.0) == pytest.approx(0.3, rel=1e-12)
    assert transverse_decay_rate(rs, 0.0) == pytest.approx(0.2, rel=1e-12)


def test_transverse_decay_fit_against_prediction():
    m = SpectralModel("ohmic", alpha=1e-3, omega_c=10.0, beta=5.0)
    p = FieldProtocol(1.0, math.pi / 4.0, 0.05)
    rates = compute_rate_set(m, p)
    assert p.omega0 >= 100.0 * rates.gamma_perp
    gen = build_generator(rates, p.omega0, p.theta)
    target = transverse_decay_rate(rates, p.theta)
    traj = evolve(gen, [1.0, 0.0, 0.0], 2.5 / target, 0.005, record_every=20)
    fitted = fit_decay_rate(traj.times, traj.s_plus_abs())
    assert fitted == pytest.approx(target, rel=0.01)


def test_bloch_ball_containment_inside_window():
    """50 sampled parameter sets in the x10 window keep |s| <= 1 + 1e-6.

    The identity (xi, gamma_perp_vac) drive displaces the precession center
    by O(|b|/omega0), and an orbit started on the sphere pokes outside by
    about twice that: containment at 1e-6 therefore additionally requires
    the drive displacement itself below 1e-6.  The sampler stays in that
    ultra-weak regime; a separate moderate-coupling check bounds the
    excursion by the analytic displacement estimate.
    """
    rng = np.random.default_rng(42)
    count = 0
    while count < 50:
        alpha = 10 ** rng.uniform(-8.0, math.log10(5e-7))
        beta = rng.choice([math.inf, 4.0, 10.0])
        theta = rng.uniform(0.1, math.pi - 0.1)
        om = 10 ** rng.uniform(-2.0, -1.3)
        m = SpectralModel("ohmic", alpha=alpha, omega_c=0.5, beta=beta)
        p = FieldProtocol(1.0, theta, om)
        rates = compute_rate_set(m, p)
        if not check_adiabatic_window(rates, p).passed:
            continue
        count += 1
        gen = build_generator(rates, p.omega0, p.theta)
        assert np.linalg.norm(gen.b_vector) / p.omega0 <= 1e-6
        s0 = rng.normal(size=3)
        s0 /= np.linalg.norm(s0)
        traj = evolve(gen, s0, p.period, 0.008, record_every=25)
        assert np.max(traj.norms()) <= 1.0 + 1e-6


def test_bloch_ball_excursion_bounded_at_moderate_coupling():
    # stronger coupling: the orbit may leave the ball, but only by the
    # displaced-center geometry, never through an instability
    m = SpectralModel("ohmic", alpha=5e-4, omega_c=10.0, beta=4.0)
    p = FieldProtocol(1.0, 0.8, 0.05)
    rates = compute_rate_set(m, p)
    gen = build_generator(rates, p.omega0, p.theta)
    displacement = np.linalg.norm(np.linalg.solve(gen.a_matrix, gen.b_vector))
    traj = evolve(gen, [0.0, 1.0, 0.0], p.period, 0.008, record_every=25)
    assert np.max(traj.norms()) <= 1.0 + 3.0 * displacement


# ---------------------------------------------------------------------------
# adiabatic window
# ---------------------------------------------------------------------------


def test_window_pass_fixture():
    rep = check_adiabatic_window(rate_set(gamma_perp=1e-4), FieldProtocol(1.0, 0.5, 1e-2))
    assert rep.passed and rep.lower_ok and rep.upper_ok
    assert "PASS" in rep.summary()


def test_window_fails_first_inequality():
    rep = check_adiabatic_window(rate_set(gamma_perp=5e-3), FieldProtocol(1.0, 0.5, 1e-2))
    assert not rep.lower_ok and rep.upper_ok and not rep.passed


def test_window_fails_second_inequality():
    p = FieldProtocol(1.0, math.pi / 2.0, 0.5)
    rep = check_adiabatic_window(rate_set(gamma_perp=1e-4), p)
    assert rep.lower_ok and not rep.upper_ok and not rep.passed
    assert "FAIL" in rep.summary()


# ---------------------------------------------------------------------------
# phase extraction
# ---------------------------------------------------------------------------


def test_phases_closed_system():
    m = SpectralModel("flat", alpha=0.0, omega_c=0.5)
    p = FieldProtocol(1.0, 0.8, 1e-2)
    ph = extract_phases(m, p)
    assert ph.phi_g == 2.0 * math.pi * math.cos(0.8)
    assert ph.phi_d == pytest.approx(p.b0 * p.period, rel=1e-15)
    assert ph.correction_fraction == 0.0
    assert ph.phi_total == ph.phi_d + ph.phi_g


def test_phases_frozen_flat_case():
    # flat, w_c = 0.5 b0, theta = pi/3: Prob_vt = alpha exactly, so
    # alpha = 0.01 gives phi_g = 2 pi cos(pi/3) (1 - 0.01) = 0.99 pi
    m = SpectralModel("flat", alpha=0.01, omega_c=0.5)
    p = FieldProtocol(1.0, math.pi / 3.0, 1e-2)
    ph = extract_phases(m, p)
    assert ph.correction_fraction == pytest.approx(0.01, rel=1e-10)
    assert ph.phi_g == pytest.approx(0.99 * math.pi, rel=1e-10)


def test_phases_equatorial_geometric_vanishes():
    m = SpectralModel("flat", alpha=0.01, omega_c=0.5)
    p = FieldProtocol(1.0, math.pi / 2.0, 1e-2)
    ph = extract_phases(m, p)
    assert abs(ph.phi_g) < 1e-15


def test_phase_identity_with_prob_vt():
    m = SpectralModel("ohmic", alpha=2e-4, omega_c=10.0)
    p = FieldProtocol(1.0, 0.7, 1e-2)
    ph = extract_phases(m, p)
    pvt = prob_virtual_transitions(m, p.b0, p.theta)
    assert ph.phi_g == pytest.approx(
        2.0 * math.pi * math.cos(0.7) * (1.0 - pvt), abs=1e-10
    )


def test_phase_antisymmetry_under_theta_reflection():
    m = SpectralModel("ohmic", alpha=2e-4, omega_c=10.0)
    rng = np.random.default_rng(5)
    for theta in rng.uniform(0.05, math.pi / 2.0 - 0.05, size=20):
        a = extract_phases(m, FieldProtocol(1.0, theta, 1e-2))
        b = extract_phases(m, FieldProtocol(1.0, math.pi - theta, 1e-2))
        assert abs(a.phi_g + b.phi_g) <= 1e-10


def test_phase_additivity_exact():
    m = SpectralModel("ohmic", alpha=2e-4, omega_c=10.0)
    ph = extract_phases(m, FieldProtocol(1.0, 0.7, 1e-2))
    assert ph.phi_total == ph.phi_d + ph.phi_g


def test_phases_window_violation_warns_but_returns():
    m = SpectralModel("ohmic", alpha=0.05, omega_c=10.0)
    p = FieldProtocol(1.0, 0.7, 1e-3)
    with pytest.warns(UserWarning, match="ADIABATIC WINDOW: FAIL"):
        ph = extract_phases(m, p)
    assert ph.window is not None and not ph.window.passed


def test_phases_need_cyclic_drive():
    m = SpectralModel("ohmic", alpha=2e-4, omega_c=10.0)
    with pytest.raises(ConfigError):
        extract_phases(m, FieldProtocol(1.0, 0.7, 0.0))


def test_ode_phase_reproduces_phase_split():
    """The generator's lambda0 + delta_lambda ties to the phase decomposition.

    The unwrapped transverse phase over one cycle must equal
    phi_d - phi_g = (omega0 + sin^2(theta) lambda) T to 1e-3 of the
    geometric correction.  arg(s_+) is taken about the displaced fixed
    point: the identity (xi) drive shifts the precession center and the
    phase read about the origin would wobble by far more than the
    tolerance.
    """
    m = SpectralModel("ohmic", alpha=1e-5, omega_c=0.5)
    p = FieldProtocol(1.0, math.pi / 3.0, 1e-2)
    rates = compute_rate_set(m, p)
    ph = extract_phases(m, p)
    gen = build_generator(rates, p.omega0, p.theta)
    traj = evolve(gen, [1.0, 0.0, 0.0], p.period, 0.004, record_every=50)
    arg = traj.arg_s_plus(center=gen.transverse_fixed_point())
    ode_phase = arg[-1] - arg[0]
    expected = ph.phi_d - ph.phi_g
    tol = 1e-3 * abs(ph.phi_berry_ideal - ph.phi_g)
    assert abs(ode_phase - expected) <= tol
    # dropping delta_lambda must break the contract by orders of magnitude
    stripped = RateSet(
        rates.gamma_perp, rates.gamma_perp_vac, rates.gamma_par,
        rates.lambda0, 0.0, rates.xi, rates.prob_vt, rates.gamma_perp_at_b0,
    )
    gen2 = build_generator(stripped, p.omega0, p.theta)
    traj2 = evolve(gen2, [1.0, 0.0, 0.0], p.period, 0.004, record_every=50)
    arg2 = traj2.arg_s_plus(center=gen2.transverse_fixed_point())
    assert abs((arg2[-1] - arg2[0]) - expected) > 50.0 * tol
