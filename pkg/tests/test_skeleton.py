import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypotube.errors import ConfigError, DomainExit, GridTooCoarse, RangeError
from hypotube.model import constant_model, get_model
from hypotube.skeleton import (
    Control,
    energy,
    growth_class_check,
    parse_control,
    r_star,
    skeleton_at,
    solve_skeleton,
    unit_energy_window,
)


def test_zero_control_linear_flow(kolmo):
    path = solve_skeleton(kolmo, (1.0, 0.0), Control.zero(1.0))
    assert np.allclose(path.at([0.25, 1.0]), [[1.0, 0.25], [1.0, 1.0]], atol=1e-12)


def test_constant_field_constant_control():
    m = constant_model((1.0, 0.0), (0.0, 0.0))
    path = solve_skeleton(m, (0.5, 2.0), Control.constant(3.0, 2.0))
    assert np.allclose(path.points[-1], [6.5, 2.0])


def test_asian_unit_control_analytic(asian):
    path = solve_skeleton(asian, (1.0, 0.0), Control.constant(1.0, 1.0))
    e = np.e
    assert np.allclose(path.points[-1], [e, e - 1], rtol=1e-6)


def test_flow_consistency_under_refinement(asian):
    phi = parse_control("sine:1.5,6", 1.0, n_intervals=20)
    a = solve_skeleton(asian, (1.0, 0.3), phi, steps_per_knot=4).points[-1]
    b = solve_skeleton(asian, (1.0, 0.3), phi, steps_per_knot=8).points[-1]
    assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(b)


def test_skeleton_at_matches_solver(asian):
    phi = Control.from_pairs([(0, 1.0), (0.3, -2.0), (0.7, 0.5)], 1.0)
    t = np.linspace(0, 1, 201)
    got = skeleton_at(asian, (1.0, 0.0), phi, t)
    ref = solve_skeleton(asian, (1.0, 0.0), phi)
    assert np.allclose(got[-1], ref.points[-1], rtol=1e-6)


def test_domain_exit(asian):
    with pytest.raises(DomainExit):
        solve_skeleton(asian, (1.0, 0.0), Control.constant(-30.0, 1.0))


def test_energy_examples():
    assert energy(Control.constant(2.0, 0.25), 0.0, 0.25) == pytest.approx(1.0)
    assert energy(Control.zero(1.0), 0.0, 1.0) == 0.0
    phi = Control.from_pairs([(0, 1.0), (0.5, 3.0)], 1.0)
    assert energy(phi, 0.0, 1.0) == pytest.approx(np.sqrt(5.0))
    with pytest.raises(RangeError):
        energy(phi, 0.5, 0.6)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0, 1), st.floats(0, 1))
def test_energy_additive(vals, a, b):
    phi = Control(np.linspace(0, 1, len(vals) + 1), np.array(vals))
    s, t = sorted((a, b))
    total = energy(phi, 0, t) ** 2
    assert energy(phi, 0, s) ** 2 + energy(phi, s, t - s) ** 2 == pytest.approx(total, abs=1e-9)


def test_growth_class_examples():
    dt = 1e-3
    t = np.arange(0, 1 + dt / 2, dt)
    assert growth_class_check(np.full(t.size, 2.0), dt, 1.0, 0.3).passed
    assert growth_class_check(np.exp(t), dt, np.exp(0.1), 0.1).passed
    res = growth_class_check(np.exp(t), dt, 1.05, 0.1)
    assert not res.passed
    assert res.witness == pytest.approx((0.0, 0.1), abs=2 * dt)
    with pytest.raises(GridTooCoarse):
        growth_class_check(np.exp(t[::100]), 0.1, 2.0, 0.1)


def test_unit_energy_window():
    assert unit_energy_window(Control.constant(2.0, 1.0)) == pytest.approx(0.25)
    assert unit_energy_window(Control.zero(1.0)) == np.inf
    # a spike of energy 1 on [0.5, 0.51]
    phi = Control.from_pairs([(0, 0.0), (0.5, 10.0), (0.51, 0.0)], 1.0)
    assert unit_energy_window(phi) == pytest.approx(0.01)


def test_r_star_examples():
    assert r_star(Control.zero(1.0), 3.0, 0.5, 2.0, 0.7) == pytest.approx(0.5 / 6 * 0.7)
    assert r_star(Control.constant(2.0, 2.0), 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.25)
    assert r_star(Control.zero(1.0), 1.0, 1.0, 1.0, 0.3) == pytest.approx(0.3)
    with pytest.raises(ConfigError):
        r_star(Control.zero(1.0), 1.0, 1.0, 0.5, 0.3)


@given(st.floats(1.0, 4.0), st.floats(1.0, 4.0), st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_r_star_monotone(scale_phi, scale_n, vals):
    phi = Control(np.linspace(0, 1, len(vals) + 1), np.array(vals))
    base = r_star(phi, lambda t: 2 + t, 0.8, 1.0, 0.5)
    assert r_star(phi.scaled(scale_phi), lambda t: 2 + t, 0.8, 1.0, 0.5) <= base * (1 + 1e-12)
    assert r_star(phi, lambda t: scale_n * (2 + t), 0.8, 1.0, 0.5) <= base * (1 + 1e-12)


def test_parse_control():
    assert parse_control("zero", 1.0).values.tolist() == [0.0]
    assert parse_control("constant:2.5", 2.0)(1.9) == 2.5
    phi = parse_control("0:1;0.5:3", 1.0)
    assert phi(0.49) == 1.0 and phi(0.5) == 3.0
    s = parse_control("sine:2,3.14159", 1.0, n_intervals=400)
    assert np.sum(s.values * np.diff(s.grid)) == pytest.approx(2 * (1 - np.cos(3.14159)) / 3.14159)
    with pytest.raises(ConfigError):
        parse_control("bogus", 1.0)


def test_counterexample_skeleton_stays_in_upper_half():
    m = get_model("counterexample")
    path = solve_skeleton(m, (1.0, 0.0), parse_control("sine:3,10", 1.0, 50))
    assert np.all(np.diff(path.points[:, 1]) >= 0)
