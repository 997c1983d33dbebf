import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntm.kinetics import (
    DomainError,
    EdgeGeometry,
    EdgeParams,
    advection_at,
    advection_derivative_at,
    diffusivity_at,
    equilibrium_insoluble,
    equilibrium_insoluble_derivative,
    reaction,
    velocity,
)


def test_velocity_examples(params):
    assert velocity(0.0, 0.0, params) == 0.0
    assert velocity(0.0, 0.01, params) == pytest.approx(0.7, rel=1e-14)
    for n in (0.0, 0.3, 2.0):
        assert velocity(1.0 / params.epsilon, n, params) == pytest.approx(-params.v_r, abs=1e-15)


def test_reaction_examples(params):
    assert reaction(0.0, 0.0, params) == 0.0
    assert reaction(2.0, 0.0, params.replace(beta=3.0)) == 6.0


def test_g_examples():
    p = EdgeParams(beta=1.0, gamma1=0.001)
    assert equilibrium_insoluble(0.0, p) == 0.0
    assert equilibrium_insoluble(2.0, p) == pytest.approx(0.004, rel=1e-14)
    assert equilibrium_insoluble_derivative(0.0, p) == 0.0
    assert equilibrium_insoluble_derivative(2.0, p) == pytest.approx(0.004, rel=1e-14)


def test_g_singularity_guard():
    p = EdgeParams(beta=1.0, gamma2=0.5)
    with pytest.raises(DomainError):
        equilibrium_insoluble(2.0, p)
    with pytest.raises(DomainError):
        equilibrium_insoluble_derivative(1.995, p)
    assert equilibrium_insoluble(1.9, p) > 0


def test_g_prime_finite_difference():
    p = EdgeParams(beta=1.0, gamma1=0.001, gamma2=0.2)
    h = 1e-5
    fd = (equilibrium_insoluble(0.5 + h, p) - equilibrium_insoluble(0.5 - h, p)) / (2 * h)
    assert fd == pytest.approx(equilibrium_insoluble_derivative(0.5, p), rel=1e-6)


def test_diffusivity_examples(params, geom):
    assert diffusivity_at(500.0, geom, params) == pytest.approx(11.04)
    assert diffusivity_at(30.0, geom, params) == pytest.approx(0.06)
    assert diffusivity_at(10.0, geom, params) == 12.0
    assert diffusivity_at(1050.0, geom, params) == pytest.approx(0.06)
    assert diffusivity_at(1080.0, geom, params) == 12.0


def test_diffusivity_right_continuous(params, geom):
    assert diffusivity_at(20.0, geom, params) == pytest.approx(0.06)  # x1 belongs to the AIS
    assert diffusivity_at(40.0, geom, params) == pytest.approx(11.04)
    with pytest.raises(ValueError):
        diffusivity_at(-1.0, geom, params)


def test_diffusivity_five_values(params, geom):
    vals = np.unique(np.round(diffusivity_at(geom.mesh, geom, params), 12))
    assert set(vals) == {0.06, 11.04, 12.0}
    assert np.all(geom.interval_diffusivity(params) > 0)


def test_advection_examples(params, geom):
    assert advection_at(10.0, 0.3, geom, params) == 0.0
    assert advection_derivative_at(10.0, 0.3, geom, params) == 0.0
    assert advection_at(500.0, 0.0, geom, params) == 0.0
    assert advection_derivative_at(500.0, 0.0, geom, params) == pytest.approx(0.0, abs=1e-15)


def test_advection_derivative_finite_difference(params, geom):
    h = 1e-6
    fd = (advection_at(500.0, 0.3 + h, geom, params) - advection_at(500.0, 0.3 - h, geom, params)) / (2 * h)
    assert fd == pytest.approx(advection_derivative_at(500.0, 0.3, geom, params), rel=1e-6)


def test_params_validation():
    with pytest.raises(ValueError):
        EdgeParams(D=0.0)
    with pytest.raises(ValueError):
        EdgeParams(f=1.5)
    with pytest.raises(ValueError):
        EdgeParams(lambda1=0.0)
    p = EdgeParams().replace(**{"lambda": 0.1})
    assert p.lambda1 == p.lambda2 == 0.1


def test_geometry_validation():
    with pytest.raises(ValueError):
        EdgeGeometry.from_counts((20, 10, 30, 40, 50), (4, 4, 4, 4, 4))
    with pytest.raises(ValueError):
        EdgeGeometry.from_counts((20, 40, 60, 80, 100), (4, 1, 4, 4, 4))
    mesh = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10.0])
    with pytest.raises(ValueError, match="not a mesh point"):
        EdgeGeometry(10.0, 2.0, 4.0, 6.5, 8.0, mesh)


SAMPLE = st.floats(0.0, 0.5)
PARAMS = st.builds(EdgeParams, beta=st.floats(1e-5, 1.0), gamma1=st.floats(0.0, 0.01),
                   gamma2=st.floats(0.0, 0.01), delta=st.floats(0, 100), epsilon=st.floats(0, 100))


@settings(max_examples=100, deadline=None)
@given(PARAMS, st.floats(0.0, 0.9))
def test_reaction_vanishes_on_equilibrium(p, frac):
    n = frac * min(p.n_max, 1.0)
    m = equilibrium_insoluble(n, p)
    assert abs(reaction(m, n, p)) <= 1e-12 * max(p.beta * m, p.gamma1 * n * n, 1e-300) + 1e-300


@settings(max_examples=100, deadline=None)
@given(PARAMS)
def test_g_nonnegative_increasing_convex(p):
    n = np.linspace(0.0, 0.95 * min(p.n_max, 10.0), 50)
    g = equilibrium_insoluble(n, p)
    assert np.all(g >= 0)
    assert np.all(np.diff(g) >= -1e-300)
    assert np.all(np.diff(g, 2) >= -1e-12 * np.abs(g).max() - 1e-300)


@settings(max_examples=100, deadline=None)
@given(PARAMS, st.floats(0.05, 0.9), st.floats(41.0, 1039.0))
def test_derivatives_match_finite_differences(p, frac, x):
    geom = EdgeGeometry.from_counts()
    n = frac * min(p.n_max, 1.0)
    h = 1e-6 * n
    gp = equilibrium_insoluble_derivative(n, p)
    fd = (equilibrium_insoluble(n + h, p) - equilibrium_insoluble(n - h, p)) / (2 * h)
    assert fd == pytest.approx(gp, rel=1e-6, abs=1e-14)
    hn = advection_derivative_at(x, n, geom, p)
    fd = (advection_at(x, n + h, geom, p) - advection_at(x, n - h, geom, p)) / (2 * h)
    assert fd == pytest.approx(hn, rel=1e-6, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1080.0), SAMPLE)
def test_advection_zero_outside_axon(x, n):
    geom = EdgeGeometry.from_counts()
    p = EdgeParams()
    if not 40.0 <= x < 1040.0:
        assert advection_at(x, n, geom, p) == 0.0
        assert advection_derivative_at(x, n, geom, p) == 0.0
