import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypotube.errors import ConfigError, H3Violated
from hypotube.mc import SimConfig, simulate_path
from hypotube.model import BUILTIN_MODELS, get_model, polynomial_model
from hypotube.norms import frame_bar, norm
from hypotube.skeleton import Control, energy
from hypotube.taylor import (
    Q,
    BrownianSegment,
    decompose,
    decompose_control,
    eta,
    principal_part,
    theta_from_segment,
    theta_samples,
)


def test_theta_zero_increments():
    assert np.allclose(theta_from_segment(BrownianSegment(0.01, np.zeros(10))), 0.0)


def test_theta_unit_slope_path():
    delta = 0.04
    for m in (100, 1000, 10000):
        dt = delta / m
        th = theta_from_segment(BrownianSegment(dt, np.full(m, dt)))
        assert th[0] == pytest.approx(np.sqrt(delta))
        # left-point sum overshoots by delta^{1/2} dt / (2 delta)
        assert abs(th[1] - np.sqrt(delta) / 2) <= np.sqrt(delta) / m
    assert th[1] == pytest.approx(np.sqrt(delta) / 2, rel=1e-3)


def test_theta_covariance_moderate_sample():
    th = theta_samples(20_000, 0.01, 0.01 / 50, seed=3)
    assert np.all(np.abs(np.cov(th.T) - Q) <= 0.05)


def test_segment_validation():
    with pytest.raises(ConfigError):
        BrownianSegment(0.1, np.zeros(20))
    with pytest.raises(ConfigError):
        BrownianSegment(0.0, np.zeros(3))


def test_eta_asian(asian):
    assert np.allclose(eta(asian, (1.0, 0.0), 1.0), [2 / 3, 0.0])
    assert np.allclose(eta(asian, (2.0, 5.0), 0.0), 0.0)


def test_eta_requires_H3():
    m = polynomial_model([{(0, 1): 1.0}, {(0, 0): 1.0}], [{}, {(1, 0): 1.0}])
    with pytest.raises(H3Violated):
        eta(m, (0.0, 0.0), 1.0)


def test_eta_matches_sigma_flow_taylor(asian):
    # along sigma = (x1, 0) the flow is x1 e^u; eta is its cubic Taylor tail
    for u in (1e-2, -0.3, 0.5):
        tail = 1.5 * (np.exp(u) - 1 - u)
        assert abs(eta(asian, (1.5, 0.0), u)[0] - tail) <= 1.5 * u**4 / 12


def test_decompose_reconstructs(asian):
    cfg = SimConfig(dt=1e-4, n_paths=4, seed=9, T=0.01)
    p = simulate_path(asian, (1.0, 1.0), cfg, path_index=2)
    dec = decompose(asian, (1.0, 1.0), 0.01, p.segment, p.points[-1])
    assert np.allclose(dec.reconstruct(), p.points[-1], rtol=0, atol=1e-12)


def test_decompose_control_zero(asian):
    x, d = np.array([1.0, 1.0]), 0.04
    dec = decompose_control(asian, x, d, Control.zero(1.0))
    assert np.allclose(dec.theta, 0) and np.allclose(dec.G, 0)
    fr = frame_bar(asian, x, d)
    assert np.allclose(dec.remainder, fr.inverse @ (dec.end_point - x - d * asian.b(x)))
    assert np.allclose(dec.remainder, 0, atol=1e-9)


def test_decompose_control_constant_theta(asian):
    d, c = 0.04, 1.7
    dec = decompose_control(asian, (1.0, 1.0), d, Control.constant(c, 1.0))
    assert np.allclose(dec.theta, [c * np.sqrt(d), c * np.sqrt(d) / 2])


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.floats(0.001, 0.05))
def test_theta_phi_bounded_by_energy(vals, delta):
    phi = Control(np.linspace(0, 1, len(vals) + 1), np.array(vals))
    a, b = phi.integrals(delta)
    theta = np.array([a * delta**-0.5, b * delta**-1.5])
    assert np.linalg.norm(theta) <= 2 * energy(phi, 0, delta) + 1e-12


def test_short_move_and_remainder_bounds():
    """Random controls with energy <= 0.2 and delta <= 0.05 on every built-in model."""
    rng = np.random.default_rng(7)
    c_move, c_rem = 0.0, 0.0
    for trial in range(1000):
        m = get_model(sorted(BUILTIN_MODELS)[trial % len(BUILTIN_MODELS)])
        x = rng.uniform((0.5, -1.0), (2.0, 1.0))
        delta = 10 ** rng.uniform(-3, np.log10(0.05))
        k = rng.integers(1, 6)
        phi = Control(np.linspace(0, delta, k + 1), rng.normal(size=k))
        eps = rng.uniform(0, 0.2)
        phi = phi.scaled(eps / max(energy(phi, 0, delta), 1e-300))
        dec = decompose_control(m, x, delta, phi)
        move = norm(dec.frame, dec.end_point - x - delta * m.b(x))
        c_move = max(c_move, move / max(eps, np.sqrt(delta)))
        c_rem = max(c_rem, np.linalg.norm(dec.remainder) / np.sqrt(delta))
    assert c_move <= 10
    assert c_rem <= 10


def test_principal_part_batched(asian):
    th = np.random.default_rng(0).normal(size=(5, 2))
    G = principal_part(asian, (1.0, 1.0), 0.01, th)
    single = np.array([principal_part(asian, (1.0, 1.0), 0.01, t) for t in th])
    assert np.allclose(G, single)
