import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypotube.control_metric import (
    Control2,
    dc_estimate,
    equivalence_report,
    norm_13,
    rho2_estimate,
    shoot,
)
from hypotube.errors import ConfigError, DomainExit
from hypotube.norms import quasi_distance


def test_norm_13_examples():
    assert norm_13(Control2.constant((0.0, 0.0))) == 0.0
    assert norm_13(Control2.constant((1.0, 1.0))) == pytest.approx(np.sqrt(2))
    assert norm_13(Control2.constant((0.0, 8.0))) == pytest.approx(2.0)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6))
def test_norm_13_invariant_under_refinement(vals):
    phi = Control2.uniform(np.array(vals))
    assert norm_13(phi.refine()) == pytest.approx(norm_13(phi), rel=1e-12, abs=1e-15)


def test_control2_validation():
    with pytest.raises(ConfigError):
        Control2(np.array([0.0, 0.5]), np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        Control2.uniform([[np.nan, 0.0]])


def test_shoot_examples(asian, kolmo):
    assert np.allclose(shoot(asian, (1.0, 0.3), Control2.constant((0.0, 0.0))), [1.0, 0.3])
    # Kolmogorov: sigma = (1, 0) and [b, sigma] = (0, 1), so the flow is a translation
    assert np.allclose(shoot(kolmo, (0.2, -1.0), Control2.constant((0.4, 0.7), 4)), [0.6, -0.3])
    assert np.allclose(shoot(asian, (1.0, 0.0), Control2.constant((1.0, 0.0)), steps=64), [np.e, 0.0], rtol=1e-8)
    with pytest.raises(DomainExit):
        shoot(asian, (1.0, 0.0), Control2.constant((-40.0, 0.0)))


def test_rho2_identity_frame(kolmo):
    assert rho2_estimate(kolmo, (0, 0), (0, 0)).value == 0.0
    for a, e in [(0.3, 0.0), (0.0, 1e-3), (-0.2, 0.05)]:
        assert rho2_estimate(kolmo, (0, 0), (a, e)).value == pytest.approx(max(abs(a), abs(e) ** (1 / 3)), rel=1e-8)


def test_dc_identity_frame(kolmo):
    assert dc_estimate(kolmo, (0, 0), (0, 0)).upper_bound == 0.0
    r = dc_estimate(kolmo, (0, 0), (0.3, 0.0), N=8, restarts=4)
    assert r.upper_bound <= 0.3 + 1e-4
    r = dc_estimate(kolmo, (0, 0), (0.0, 1e-3), N=8, restarts=4)
    assert r.upper_bound <= 0.1 + 1e-3


def test_dc_certificate_consistent(asian):
    x, y = np.array([1.0, 1.0]), np.array([1.02, 1.01])
    r = dc_estimate(asian, x, y, N=8, restarts=4)
    assert r.upper_bound >= norm_13(r.control) * (1 - 1e-12)
    gap = np.linalg.norm(shoot(asian, x, r.control) - y)
    assert gap <= 1e-6 * (1 + np.linalg.norm(y - x))
    assert r.upper_bound <= rho2_estimate(asian, x, y).value * (1 + 1e-6)


def test_dc_refinement_with_warm_start(asian):
    x, y = (1.0, 1.0), (1.0, 1.01)
    coarse = dc_estimate(asian, x, y, N=4, restarts=4)
    fine = dc_estimate(asian, x, y, N=8, restarts=4, warm_start=coarse.control)
    assert fine.upper_bound <= coarse.upper_bound + 1e-6


def test_dc_deterministic_across_threads(asian):
    a = dc_estimate(asian, (1.0, 1.0), (1.01, 1.02), N=4, restarts=4, threads=1)
    b = dc_estimate(asian, (1.0, 1.0), (1.01, 1.02), N=4, restarts=4, threads=4)
    assert a.upper_bound == b.upper_bound and a.best_restart == b.best_restart


def test_identity_frame_ratio_band(kolmo):
    rng = np.random.default_rng(5)
    ang = 2 * np.pi * rng.random(100)
    rad = 10 ** rng.uniform(-3, -1, 100)
    ratios = []
    for a, r in zip(ang, rad):
        y = r * np.array([np.cos(a), np.sin(a)])
        d = quasi_distance(kolmo, (0, 0), y).value
        dc = dc_estimate(kolmo, (0, 0), y, N=4, restarts=3, polish_best=1, max_iter=20)
        ratios.append(d / dc.upper_bound)
    assert 0.5 <= min(ratios) and max(ratios) <= 2.0


def test_equivalence_report_rows(asian):
    rows = equivalence_report(asian, (1.0, 1.0), [(1.0, 0.0), (0.0, 1.0)], [1e-2], N=4, restarts=3)
    assert len(rows) == 2
    assert rows[0].d == pytest.approx(1e-2, rel=1e-8)
    assert rows[1].d == pytest.approx(1e-2 ** (1 / 3), rel=1e-8)
    for r in rows:
        assert r.dc_upper <= r.rho2 * (1 + 1e-6)
        assert r.ratio > 0
