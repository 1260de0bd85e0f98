import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypotube.errors import ConfigError, DomainError, H3Violated, SingularSigma
from hypotube.model import (
    BUILTIN_MODELS,
    Box,
    check_H3,
    constant_model,
    directional_derivative,
    fd_jacobian,
    get_model,
    hypothesis_profile,
    lie_bracket,
    polynomial_model,
)

coord = st.floats(0.2, 5.0)


def test_asian_d_b_sigma_vanishes(asian):
    assert np.allclose(directional_derivative(asian.sigma, asian.b, (2.0, 3.0)), 0.0)


def test_asian_d_sigma_b_matches_finite_difference(asian):
    x = np.array([2.0, 3.0])
    oracle = fd_jacobian(asian.b.value, x) @ asian.sigma(x)
    got = directional_derivative(asian.b, asian.sigma, x)
    assert np.allclose(got, oracle, atol=1e-8)
    assert np.allclose(got, [0.0, 2.0])


def test_counterexample_bracket():
    m = get_model("counterexample")
    assert np.allclose(directional_derivative(m.b, m.sigma, (1.0, 0.0)), [0.0, 2.0])
    assert np.allclose(m.bracket((1.0, 0.0)), [0.0, 2.0])


def test_constant_fields_commute():
    m = constant_model((1.0, 0.0), (0.0, 1.0))
    assert np.allclose(lie_bracket(m.b, m.sigma, (0.3, -2.0)), 0.0)


def test_asian_bracket_matches_fd(asian):
    x = np.array([1.0, 1.0])
    fd = fd_jacobian(asian.b.value, x) @ asian.sigma(x) - fd_jacobian(asian.sigma.value, x) @ asian.b(x)
    assert np.allclose(asian.bracket(x), fd, atol=1e-8)
    assert np.allclose(asian.bracket(x), [0.0, 1.0])


def test_domain_error(asian):
    with pytest.raises(DomainError):
        asian.bracket((-1.0, 0.0))


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
def test_builtin_jacobians_consistent(name, rng):
    m = get_model(name)
    for x in rng.uniform((0.5, -1.0), (2.0, 1.0), (20, 2)):
        assert m.sigma.check_jacobian(x)
        assert m.b.check_jacobian(x)


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
def test_builtin_H3_and_ranges(name, rng):
    m = get_model(name)
    pts = rng.uniform((0.5, -1.0), (2.0, 1.0), (50, 2))
    rep = check_H3(m, pts)
    assert np.allclose(rep.kappa, m.kappa(pts), atol=1e-8)
    assert np.all(m.n(pts) >= 1)
    lam = m.lam(pts)
    assert np.all((lam > 0) & (lam <= 1))


def test_check_H3_collects_violations():
    # sigma = (x2, 1): d_sigma sigma = (1, 0), not parallel to sigma
    m = polynomial_model([{(0, 1): 1.0}, {(0, 0): 1.0}], [{}, {(1, 0): 1.0}])
    assert not m.h3
    with pytest.raises(H3Violated) as err:
        check_H3(m, [(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)])
    assert len(err.value.points) == 3


def test_check_H3_singular_sigma():
    m = polynomial_model([{(1, 0): 1.0}, {}], [{}, {(1, 0): 1.0}])
    with pytest.raises(SingularSigma):
        check_H3(m, [(0.0, 0.0)])


def test_polynomial_model_reproduces_asian(asian, rng):
    m = polynomial_model([{(1, 0): 1.0}, {}], [{}, {(1, 0): 1.0}], Box((0.1, -5), (5, 5)))
    assert m.h3
    pts = rng.uniform((0.5, -1.0), (2.0, 1.0), (10, 2))
    assert np.allclose(m.A(pts), asian.A(pts))
    assert np.allclose(m.kappa3(pts), 1.0)


@given(coord, st.floats(-3, 3))
def test_asian_kappa_cubic_from_derivatives(x1, x2):
    m = get_model("asian")
    x = np.array([x1, x2])
    # d_sigma d_sigma sigma = kappa3 * sigma with kappa3 = d_sigma kappa + kappa^2 = 1
    assert np.allclose(m.d_sigma_d_sigma_sigma(x), m.kappa3(x) * m.sigma(x))


@given(coord, st.floats(-3, 3))
def test_ito_drift_is_b_plus_half_kappa_sigma(x1, x2):
    m = get_model("asian")
    x = np.array([x1, x2])
    assert np.allclose(m.ito_drift(x), m.b(x) + 0.5 * m.kappa(x) * m.sigma(x))


def test_hypothesis_profile_bounds_pointwise(asian):
    pts = np.array([[1.5, 0.0], [3.0, 2.0]])
    prof = hypothesis_profile(asian, pts)
    assert np.all(prof.n >= asian.n(pts))
    assert np.all(prof.lam <= asian.lam(pts))
    with pytest.raises(ConfigError):
        hypothesis_profile(asian, pts, n_samples=10)


def test_get_model_unknown():
    with pytest.raises(ConfigError):
        get_model("nope")
