import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntm.kinetics import DomainError, EdgeGeometry, EdgeParams, equilibrium_insoluble
from ntm.steady_state import (
    EdgeDiscretization,
    EdgeProfile,
    LinearizedProfile,
    ShootingError,
    edge_mass,
    flux_residual,
    mass_coefficient,
    shooting_tolerance,
    solve_linearized,
    solve_profile,
)


def test_zero_boundary_data(params, geom):
    prof = solve_profile(0.0, 0.0, geom, params)
    assert prof.flux_J == 0.0
    assert not prof.n_values.any() and not prof.m_values.any()


def test_unit_series_resistance(unit_diffusion):
    g, p = unit_diffusion
    prof = solve_profile(1.0, 0.0, g, p)
    assert prof.flux_J == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_allclose(prof.n_values, 1.0 - g.mesh, atol=1e-9)


def test_series_resistance_default_geometry(geom):
    p = EdgeParams(delta=0.0, epsilon=0.0)
    R = 20 / 12 + 20 / 0.06 + 1000 / 11.04 + 20 / 0.06 + 20 / 12
    prof = solve_profile(0.3, 0.1, geom, p)
    assert prof.flux_J == pytest.approx(0.2 / R, rel=1e-9)


def test_profile_invariants(params, geom):
    prof = solve_profile(0.02, 0.0, geom, params)
    assert np.all(prof.n_values >= 0)
    assert prof.n_values[0] == 0.02
    assert abs(prof.n_values[-1]) <= prof.tol
    k3, k4 = geom.boundary_index[2], geom.boundary_index[3]
    expected = equilibrium_insoluble(prof.n_values, params)
    np.testing.assert_allclose(prof.m_values[:k3 + 1], expected[:k3 + 1], rtol=1e-14)
    np.testing.assert_allclose(prof.m_values[k4:], expected[k4:], rtol=1e-14)
    assert not prof.m_values[k3 + 1:k4].any()
    assert prof.residual <= 10 * prof.tol


def test_domain_errors():
    g = EdgeGeometry.from_counts()
    with pytest.raises(DomainError):
        solve_profile(-0.1, 0.0, g, EdgeParams())
    with pytest.raises(DomainError):
        solve_profile(1.0, 0.0, g, EdgeParams(beta=1e-3, gamma2=0.01))


def test_out_of_regime_reports_flux():
    # strong advection makes the forward recurrence blow up
    with pytest.raises(ShootingError) as info:
        solve_profile(0.3, 0.0, EdgeGeometry.from_counts(), EdgeParams())
    assert info.value.J is not None


def test_tolerance_modes():
    assert shooting_tolerance(0.5, 0.1) == 1e-10
    assert shooting_tolerance(5.0, 0.1) == pytest.approx(5e-10)
    assert shooting_tolerance(0.5, 0.1, mode="relative") == pytest.approx(5e-11)
    with pytest.raises(ValueError):
        shooting_tolerance(1, 1, mode="bogus")


def test_linearized_boundary_values(params, geom):
    prof = solve_profile(0.02, 0.005, geom, params)
    left = solve_linearized(prof, "left", geom, params)
    right = solve_linearized(prof, "right", geom, params)
    assert left.q_values[0] == 1.0 and abs(left.q_values[-1]) < 1e-12
    assert right.q_values[0] == 0.0 and abs(right.q_values[-1] - 1.0) < 1e-12


def test_linearized_pure_diffusion_linear_profile(unit_diffusion):
    g, p = unit_diffusion
    prof = solve_profile(0.0, 0.0, g, p)
    q = solve_linearized(prof, "left", g, p)
    np.testing.assert_allclose(q.q_values, 1.0 - g.mesh, atol=1e-13)
    assert q.W == pytest.approx(1.0, rel=1e-12)


def test_mass_coefficient_examples(unit_diffusion):
    g, p = unit_diffusion
    prof = solve_profile(0.0, 0.0, g, p)
    zero = LinearizedProfile(np.zeros(g.K + 1), 0.0, "left")
    assert mass_coefficient(prof, zero, 1.0, g, p) == 0.0
    q = solve_linearized(prof, "left", g, p)
    assert mass_coefficient(prof, q, 1.0, g, p) == pytest.approx(0.5, rel=1e-12)


def test_mass_coefficient_refinement():
    # a smooth profile: trapezoid error of C falls by about 4 when dx halves
    p = EdgeParams(D=1.0, f=1.0, lambda1=1.0, lambda2=1.0, delta=0.0, epsilon=0.0, beta=1.0, gamma1=1.0)

    def coefficient(counts):
        g = EdgeGeometry.from_counts((0.2, 0.4, 0.6, 0.8, 1.0), counts)
        x = g.mesh
        n = 0.5 + 0.1 * np.sin(3 * x)
        prof = EdgeProfile(n, equilibrium_insoluble(n, p), 0.0, 0.0)
        q = LinearizedProfile(np.cos(2 * x), 0.0, "left")
        return mass_coefficient(prof, q, 1.0, g, p), g

    from scipy.integrate import quad

    def integrand(x):
        n = 0.5 + 0.1 * np.sin(3 * x)
        gp = 2 * n  # g'(n) = 2 gamma1 n / beta
        cleft = 0.6 < x < 0.8
        return np.cos(2 * x) * (1.0 + (0.0 if cleft else gp))

    exact = sum(quad(integrand, a, b, epsabs=1e-14)[0] for a, b in ((0, 0.6), (0.6, 0.8), (0.8, 1.0)))
    coarse, _ = coefficient((4, 4, 4, 4, 4))
    fine, _ = coefficient((8, 8, 8, 8, 8))
    ratio = abs(coarse - exact) / abs(fine - exact)
    assert 3.5 < ratio < 4.5


def test_edge_mass_examples(unit_diffusion):
    g, p = unit_diffusion
    zero = EdgeProfile(np.zeros(g.K + 1), np.zeros(g.K + 1), 0.0, 0.0)
    assert edge_mass(zero, 3.0, g) == 0.0
    ones = EdgeProfile(np.ones(g.K + 1), np.zeros(g.K + 1), 0.0, 0.0)
    assert edge_mass(ones, 2.0, g) == pytest.approx(2.0, rel=1e-14)


def test_edge_mass_refinement():
    coarse = EdgeGeometry.from_counts((0.2, 0.4, 0.6, 0.8, 1.0), (4, 4, 4, 4, 4))
    errs = []
    for g in (coarse, coarse.refined(2)):
        n = np.exp(g.mesh)
        prof = EdgeProfile(n, np.zeros_like(n), 0.0, 0.0)
        errs.append(abs(edge_mass(prof, 1.0, g) - (np.e - 1.0)))
    h = coarse.dx.max()
    assert errs[0] <= np.e * h * h / 12 * 1.0001
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


def test_refinement_convergence_first_order(params, geom):
    J = [solve_profile(0.02, 0.005, g, params).flux_J for g in (geom, geom.refined(2), geom.refined(4))]
    d1, d2 = abs(J[0] - J[1]), abs(J[1] - J[2])
    assert 1.6 < d1 / d2 < 2.4


def test_determinism(params, geom):
    a = solve_profile(0.015, 0.004, geom, params)
    b = solve_profile(0.015, 0.004, geom, params)
    assert np.array_equal(a.n_values, b.n_values) and a.flux_J == b.flux_J


PURE = EdgeParams(delta=0.0, epsilon=0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_pure_diffusion_antisymmetry(a, b):
    g = EdgeGeometry.from_counts()
    Jab = solve_profile(a, b, g, PURE).flux_J
    Jba = solve_profile(b, a, g, PURE).flux_J
    assert Jab == pytest.approx(-Jba, rel=1e-8, abs=1e-12)
    assert Jab == pytest.approx(EdgeDiscretization(g, PURE).series_flux(a, b), rel=1e-8, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.floats(0.01, 0.2))
def test_pure_diffusion_monotone(a, b, step):
    g = EdgeGeometry.from_counts()
    J = solve_profile(a, b, g, PURE).flux_J
    assert solve_profile(a + step, b, g, PURE).flux_J > J
    assert solve_profile(a, b + step, g, PURE).flux_J < J


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.03), st.floats(0.0, 0.03), st.sampled_from([0.005, 0.05, 0.1]))
def test_flux_constancy_property(a, b, lam):
    g = EdgeGeometry.from_counts()
    p = EdgeParams(lambda1=lam, lambda2=lam)
    prof = solve_profile(a, b, g, p)
    assert flux_residual(prof.n_values, prof.flux_J, g, p) <= 10 * prof.tol
    # the far end matches its boundary value only to within the shooting tolerance
    assert np.all(prof.n_values[:-1] >= 0)
    assert abs(prof.n_values[-1] - b) <= prof.tol


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.03), st.floats(0.0, 0.03), st.floats(-2, 2), st.floats(-2, 2))
def test_superposition_property(a, b, alpha, gamma):
    g = EdgeGeometry.from_counts()
    p = EdgeParams()
    prof = solve_profile(a, b, g, p)
    ql = solve_linearized(prof, "left", g, p).q_values
    qr = solve_linearized(prof, "right", g, p).q_values
    q = solve_linearized(prof, (alpha, gamma), g, p).q_values
    np.testing.assert_allclose(q, alpha * ql + gamma * qr, rtol=0, atol=1e-10)
