import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypotube.errors import ConfigError, InsufficientSamples
from hypotube.mc import (
    SimConfig,
    density_fit,
    rescaled_samples,
    short_time_escape,
    simulate_path,
    simulate_paths,
    tube_probabilities,
    tube_probability,
    wilson_interval,
)
from hypotube.model import constant_model, get_model
from hypotube.rng import map_blocks, thread_count
from hypotube.skeleton import Control, solve_skeleton


def test_simconfig_validation():
    with pytest.raises(ConfigError):
        SimConfig(dt=1e-3, n_paths=0)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.0, n_paths=5)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.3, n_paths=5, T=1.0).steps()
    with pytest.raises(ConfigError):
        SimConfig(dt=1e-3, n_paths=5).require_short_time(0.01)


def test_no_noise_matches_skeleton():
    m = constant_model(sigma=(0.0, 0.0), b=(1.0, -0.5))
    X, alive = simulate_paths(m, (0.0, 0.0), SimConfig(dt=1e-3, n_paths=3, T=1.0))
    ref = solve_skeleton(m, (0.0, 0.0), Control.zero(1.0)).points[-1]
    assert alive.all() and np.allclose(X, ref, atol=1e-12)


def test_asian_second_component_positive(asian):
    X, alive = simulate_paths(asian, (1.0, 0.0), SimConfig(dt=1e-3, n_paths=10_000, T=0.1))
    assert alive.all() and X[:, 1].min() > 0


def test_simulate_path_matches_batch_rows(asian):
    cfg = SimConfig(dt=1e-3, n_paths=70, seed=5, T=0.05, block_size=32)
    X, _ = simulate_paths(asian, (1.0, 1.0), cfg)
    for i in (0, 31, 32, 69):
        assert np.array_equal(simulate_path(asian, (1.0, 1.0), cfg, i).points[-1], X[i])


@pytest.mark.parametrize("threads", [1, 3, 8])
def test_thread_count_invariance(asian, threads):
    base = SimConfig(dt=1e-3, n_paths=200, seed=11, T=0.1, block_size=16, threads=1)
    ref = simulate_paths(asian, (1.0, 1.0), base)[0]
    cfg = SimConfig(dt=1e-3, n_paths=200, seed=11, T=0.1, block_size=16, threads=threads)
    assert np.array_equal(simulate_paths(asian, (1.0, 1.0), cfg)[0], ref)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("HYPOTUBE_THREADS", "3")
    assert thread_count() == 3
    assert thread_count(5) == 5


def test_map_blocks_order():
    out = map_blocks(lambda g, s, c: (s, c), 10, 0, block_size=4, threads=4)
    assert out == [(0, 4), (4, 4), (8, 2)]


def test_wilson_coverage():
    rng = np.random.default_rng(2)
    n, reps = 200, 1000
    k = rng.binomial(n, 0.5, size=reps)
    cover = sum(lo <= 0.5 <= hi for lo, hi in (wilson_interval(int(j), n) for j in k))
    assert cover / reps >= 0.93


@given(st.integers(0, 50), st.integers(50, 200))
def test_wilson_contains_estimate(k, n):
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_tube_crn_monotone_and_ci(asian):
    cfg = SimConfig(dt=2e-3, n_paths=2000, seed=4, T=0.5)
    res = tube_probabilities(asian, (1.0, 0.0), Control.zero(0.5), [0.1, 0.2, 0.4, 1.0], cfg)
    p = [r.p_hat for r in res]
    assert p == sorted(p)
    for r in res:
        assert r.ci_low <= r.p_hat <= r.ci_high
        assert r.exit_time_histogram.sum() == r.n_paths - r.successes


def test_tube_dt_refinement_oracle(asian):
    phi = Control.zero(0.5)
    coarse = tube_probability(asian, (1.0, 0.0), phi, 0.4, SimConfig(dt=1e-3, n_paths=4000, seed=1, T=0.5))
    fine = tube_probability(asian, (1.0, 0.0), phi, 0.4, SimConfig(dt=1e-4, n_paths=4000, seed=2, T=0.5))
    assert coarse.ci_low <= fine.ci_high and fine.ci_low <= coarse.ci_high


def test_tube_radius_range(asian):
    with pytest.raises(ConfigError):
        tube_probability(asian, (1.0, 0.0), Control.zero(0.5), 1.5, SimConfig(dt=1e-3, n_paths=5, T=0.5))


def test_rescaled_mean_matches_exact_moments(asian):
    # X1 = x1 exp(W) and X2 = x2 + int X1, so E[F] is explicit and of order delta^{1/2}
    d = 0.01
    s = rescaled_samples(asian, (1.0, 1.0), d, SimConfig(dt=1e-4, n_paths=100_000, seed=8, T=d))
    F = s.F[s.alive]
    g = np.exp(d / 2) - 1
    exact = np.array([g / d**0.5, (2 * g - d) / d**1.5])
    se = F.std(axis=0, ddof=1) / np.sqrt(F.shape[0])
    assert np.all(np.abs(F.mean(axis=0) - exact) <= 3 * se)
    # the principal part carries the first component of the bias
    assert s.G[:, 0].mean() == pytest.approx(d**0.5 / 2, abs=3 * se[0])


def test_short_time_escape(asian):
    cfg = SimConfig(dt=1e-4, n_paths=5000, seed=3, T=0.01)
    assert short_time_escape(asian, (1.0, 1.0), 0.01, 0.1, np.inf, cfg).p_hat == 0.0
    a = short_time_escape(asian, (1.0, 1.0), 0.01, 0.1, 0.5, cfg)
    b = short_time_escape(asian, (1.0, 1.0), 0.01, 0.2, 0.5, cfg)
    assert b.p_hat < a.p_hat
    with pytest.raises(ConfigError):
        short_time_escape(asian, (1.0, 1.0), 0.01, 0.005, 0.5, cfg)


def test_density_fit_gaussian():
    z = np.random.default_rng(0).standard_normal((100_000, 2))
    fit = density_fit(z)
    assert fit.at((0, 0)) == pytest.approx(1 / (2 * np.pi), rel=0.10)
    assert fit.L1 == pytest.approx(0.5, rel=0.15) and fit.L2 == pytest.approx(0.5, rel=0.15)
    assert fit.K1 <= fit.K2 and fit.L2 <= fit.L1 and fit.envelope_holds()
    assert fit.gaussian_tail
    assert set(fit.sensitivity) == {0.5, 2.0}


def test_density_fit_uniform_disk_flags_flat_tail():
    rng = np.random.default_rng(1)
    r = 2.0 * np.sqrt(rng.random(100_000))
    a = 2 * np.pi * rng.random(100_000)
    fit = density_fit(np.stack([r * np.cos(a), r * np.sin(a)], -1), grid_radius=1.5)
    assert not fit.gaussian_tail and abs(fit.L2) < 0.05


def test_density_fit_errors():
    z = np.random.default_rng(0).standard_normal((20_000, 2))
    with pytest.raises(ConfigError):
        density_fit(z, grid_radius=0.4)
    with pytest.raises(InsufficientSamples):
        density_fit(z[:500])
