"""Monte Carlo: Euler paths, tube probabilities, rescaled end points, density fits.

The Stratonovich equation ``dX = sigma(X) o dW + b(X) dt`` is integrated in
its Ito form with drift ``b + d_sigma sigma / 2`` by explicit Euler steps.
Paths are simulated in blocks (see :mod:`hypotube.rng`), so every estimate is
a deterministic function of ``(seed, dt, n_paths, block_size)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import binomtest

from .errors import ConfigError, InsufficientSamples
from .model import DiffusionModel, as_point
from .norms import frame, frame_bar, inverse2
from .rng import DEFAULT_BLOCK, map_blocks
from .skeleton import Control, skeleton_at
from .taylor import BrownianSegment, principal_part, theta_from_segment

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "PathSample",
    "TubeResult",
    "RescaledSamples",
    "DensityFit",
    "EscapeResult",
    "wilson_interval",
    "simulate_paths",
    "simulate_path",
    "tube_probability",
    "tube_probabilities",
    "rescaled_samples",
    "density_fit",
    "short_time_escape",
]


@dataclass(frozen=True)
class SimConfig:
    """``T`` is the horizon (``delta`` for short-time runs)."""

    dt: float
    n_paths: int
    seed: int = 0
    T: float = 1.0
    block_size: int = DEFAULT_BLOCK
    threads: Optional[int] = None

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError("n_paths must be a positive integer")
        if not (self.T > 0):
            raise ConfigError("horizon T must be positive")
        if self.block_size < 1:
            raise ConfigError("block_size must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def steps(self, T: Optional[float] = None) -> int:
        T = self.T if T is None else T
        m = int(round(T / self.dt))
        if m < 1 or abs(m * self.dt - T) > 1e-9 * T:
            raise ConfigError(f"horizon {T:g} is not an integer multiple of dt={self.dt:g}")
        return m

    def require_short_time(self, delta: float):
        if delta > 1:
            raise ConfigError("short-time runs need delta <= 1")
        if self.dt > delta / 50 * (1 + 1e-12):
            raise ConfigError(f"short-time runs need dt <= delta/50 (dt={self.dt:g}, delta={delta:g})")


def wilson_interval(k: int, n: int, level: float = 0.95):
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _euler(model, x0, dW, dt, on_step=None):
    """Euler steps for a block; ``dW`` has shape ``(count, n_steps)``.

    Paths that leave the domain are frozen and flagged; ``exit_step`` holds
    the first step index outside (``-1`` if none).
    """
    count, m = dW.shape
    X = np.broadcast_to(as_point(x0), (count, 2)).copy()
    alive = np.ones(count, dtype=bool)
    exit_step = np.full(count, -1)
    for k in range(m):
        Xn = X + model.ito_drift(X) * dt + model.sigma.value(X) * dW[:, k, None]
        inside = model.domain.contains(Xn) & np.all(np.isfinite(Xn), axis=-1)
        out = alive & ~inside
        exit_step[out] = k + 1
        alive &= inside
        X = np.where(alive[:, None], Xn, X)
        if on_step is not None:
            on_step(k + 1, X, alive)
    return X, alive, exit_step


def _increments(gen, count, m, dt):
    return gen.standard_normal((count, m)) * np.sqrt(dt)


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    points: np.ndarray
    segment: BrownianSegment
    exit_time: Optional[float]


def simulate_path(model: DiffusionModel, x0, cfg: SimConfig, path_index: int = 0) -> PathSample:
    """One path, bitwise identical to row ``path_index`` of a batched run."""
    if not (0 <= path_index < cfg.n_paths):
        raise ConfigError("path_index out of range")
    model.require(as_point(x0))
    m = cfg.steps()
    block, row = divmod(path_index, cfg.block_size)
    from .rng import block_generator

    dW = _increments(block_generator(cfg.seed, block), row + 1, m, cfg.dt)[row:]
    pts = [as_point(x0)[None, :]]
    X, alive, exit_step = _euler(model, x0, dW, cfg.dt, lambda k, X, a: pts.append(X.copy()))
    times = cfg.dt * np.arange(m + 1)
    ex = None if exit_step[0] < 0 else float(times[exit_step[0]])
    return PathSample(times, np.concatenate(pts), BrownianSegment(cfg.dt, dW[0]), ex)


def simulate_paths(model: DiffusionModel, x0, cfg: SimConfig):
    """End points, alive flags and increments of all paths."""
    model.require(as_point(x0))
    m = cfg.steps()

    def block(gen, start, count):
        dW = _increments(gen, count, m, cfg.dt)
        X, alive, _ = _euler(model, x0, dW, cfg.dt)
        return X, alive

    parts = map_blocks(block, cfg.n_paths, cfg.seed, cfg.block_size, cfg.threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ------------------------------------------------------------------- tubes


@dataclass
class TubeResult:
    R: float
    p_hat: float
    ci_low: float
    ci_high: float
    n_paths: int
    successes: int
    seed: int
    exit_time_histogram: np.ndarray
    histogram_edges: np.ndarray


def tube_probabilities(
    model: DiffusionModel,
    x0,
    phi: Control,
    Rs: Sequence[float],
    cfg: SimConfig,
    n_bins: int = 20,
) -> list[TubeResult]:
    """Estimate ``P(sup_t |X_t - x_t(phi)|_{A_R(x_t(phi))} <= 1)`` for several ``R``.

    All radii share the same paths, so the estimates are monotone in ``R``.
    Monitoring happens at every Euler step; leaving the domain is a failure.
    """
    Rs = np.asarray(Rs, dtype=float)
    if np.any((Rs <= 0) | (Rs > 1)):
        raise ConfigError("tube radii must lie in (0, 1]")
    m = cfg.steps(phi.T)
    times = cfg.dt * np.arange(m + 1)
    skel = skeleton_at(model, x0, phi, times)
    Ainv = inverse2(model.A(skel))
    w1, w3 = 1.0 / Rs, 1.0 / Rs**3

    def block(gen, start, count):
        dW = _increments(gen, count, m, cfg.dt)
        fail = np.full((count, Rs.size), -1)

        def monitor(k, X, alive):
            v = np.einsum("ij,nj->ni", Ainv[k], X - skel[k])
            q = v[:, :1] ** 2 * w1 + v[:, 1:] ** 2 * w3
            hit = ((q > 1.0) | ~alive[:, None]) & (fail < 0)
            fail[hit] = k

        _euler(model, x0, dW, cfg.dt, monitor)
        return fail

    fail = np.concatenate(map_blocks(block, cfg.n_paths, cfg.seed, cfg.block_size, cfg.threads))
    edges = np.linspace(0.0, phi.T, n_bins + 1)
    out = []
    for j, R in enumerate(Rs):
        ok = int(np.sum(fail[:, j] < 0))
        lo, hi = wilson_interval(ok, cfg.n_paths)
        hist, _ = np.histogram(times[fail[fail[:, j] >= 0, j]], bins=edges)
        out.append(TubeResult(float(R), ok / cfg.n_paths, lo, hi, cfg.n_paths, ok, cfg.seed, hist, edges))
    return out


def tube_probability(model, x0, phi: Control, R: float, cfg: SimConfig) -> TubeResult:
    return tube_probabilities(model, x0, phi, [R], cfg)[0]


# ----------------------------------------------------------- short time


@dataclass
class RescaledSamples:
    """``F = Abar^{-1}(X_delta - x_hat)``, its principal part ``G`` and ``Theta``."""

    F: np.ndarray
    G: np.ndarray
    theta: np.ndarray
    X: np.ndarray
    alive: np.ndarray

    @property
    def remainder(self) -> np.ndarray:
        return self.F - self.G


def rescaled_samples(model: DiffusionModel, x, delta: float, cfg: SimConfig) -> RescaledSamples:
    cfg.require_short_time(delta)
    x = as_point(x)
    fr = frame_bar(model, x, delta)
    x_hat = x + delta * model.b(x)
    m = cfg.steps(delta)

    def block(gen, start, count):
        dW = _increments(gen, count, m, cfg.dt)
        X, alive, _ = _euler(model, x, dW, cfg.dt)
        return X, alive, theta_from_segment(BrownianSegment(cfg.dt, dW))

    parts = map_blocks(block, cfg.n_paths, cfg.seed, cfg.block_size, cfg.threads)
    X = np.concatenate([p[0] for p in parts])
    alive = np.concatenate([p[1] for p in parts])
    theta = np.concatenate([p[2] for p in parts])
    F = (X - x_hat) @ fr.inverse.T
    G = principal_part(model, x, delta, theta, fr)
    return RescaledSamples(F=F, G=G, theta=theta, X=X, alive=alive)


@dataclass
class EscapeResult:
    p_hat: float
    ci_low: float
    ci_high: float
    n_paths: int
    R: float
    threshold: float


def short_time_escape(model: DiffusionModel, x, delta: float, R: float, threshold: float, cfg: SimConfig):
    """``P(sup_{t<=delta} |X_t - x - b(x) t|_{A_R(x)} >= threshold)``."""
    if R < delta:
        raise ConfigError("the short-time escape regime needs R >= delta")
    cfg.require_short_time(delta)
    if np.isinf(threshold):
        return EscapeResult(0.0, 0.0, wilson_interval(0, cfg.n_paths)[1], cfg.n_paths, R, threshold)
    x = as_point(x)
    inv = frame(model, x, R).inverse
    bx = model.b(x)
    m = cfg.steps(delta)

    def block(gen, start, count):
        dW = _increments(gen, count, m, cfg.dt)
        sup = np.zeros(count)

        def monitor(k, X, alive):
            v = np.linalg.norm((X - x - bx * (k * cfg.dt)) @ inv.T, axis=-1)
            np.maximum(sup, np.where(alive, v, np.inf), out=sup)

        _euler(model, x, dW, cfg.dt, monitor)
        return sup

    sup = np.concatenate(map_blocks(block, cfg.n_paths, cfg.seed, cfg.block_size, cfg.threads))
    k = int(np.sum(sup >= threshold))
    lo, hi = wilson_interval(k, cfg.n_paths)
    return EscapeResult(k / cfg.n_paths, lo, hi, cfg.n_paths, R, threshold)


# ---------------------------------------------------------------- density


@dataclass
class DensityFit:
    """Gaussian envelopes ``K1 e^{-L1|z|^2} <= p_hat(z) <= K2 e^{-L2|z|^2}``.

    The envelopes hold on every grid point where ``valid`` (``p_hat`` above
    the noise floor ``10 / (n h1 h2)``).
    """

    grid: np.ndarray
    p_hat: np.ndarray
    K1: float
    L1: float
    K2: float
    L2: float
    bandwidth: tuple
    noise_floor: float
    valid: np.ndarray
    n_samples: int
    gaussian_tail: bool
    sensitivity: dict = field(default_factory=dict)

    def lower_env(self, z=None):
        z = self.grid if z is None else np.asarray(z, dtype=float)
        return self.K1 * np.exp(-self.L1 * np.sum(z * z, axis=-1))

    def upper_env(self, z=None):
        z = self.grid if z is None else np.asarray(z, dtype=float)
        return self.K2 * np.exp(-self.L2 * np.sum(z * z, axis=-1))

    def at(self, z) -> float:
        """``p_hat`` at the grid node nearest to ``z``."""
        i = int(np.argmin(np.sum((self.grid - np.asarray(z, dtype=float)) ** 2, axis=-1)))
        return float(self.p_hat[i])

    def envelope_holds(self) -> bool:
        p, v = self.p_hat[self.valid], self.valid
        tol = 1e-12
        return bool(
            np.all(self.lower_env()[v] <= p * (1 + tol)) and np.all(p <= self.upper_env()[v] * (1 + tol))
        )


def _silverman(z):
    n = z.shape[0]
    q75, q25 = np.percentile(z, [75, 25], axis=0)
    spread = np.minimum(z.std(axis=0, ddof=1), (q75 - q25) / 1.349)
    spread = np.where(spread > 0, spread, z.std(axis=0, ddof=1))
    return spread * n ** (-1.0 / 6.0)  # (4/(d+2))^{1/(d+4)} = 1 in two dimensions


def _binned_kde(z, radius, grid_n, h, max_bins=4001):
    """Product-Gaussian KDE at the nodes of a ``grid_n x grid_n`` square grid."""
    spacing = 2 * radius / (grid_n - 1)
    sub = int(np.ceil(spacing / (np.min(h) / 3)))
    sub += 1 - sub % 2  # odd, so grid nodes are bin centres
    w = spacing / sub
    pad = int(np.ceil(4 * np.max(h) / w))
    nb = (grid_n - 1) * sub + 1 + 2 * pad
    if nb > max_bins:
        raise ConfigError(f"bandwidth {np.min(h):.3g} too small for radius {radius:g}")
    edges = -radius - pad * w - w / 2 + w * np.arange(nb + 1)
    H, _, _ = np.histogram2d(z[:, 0], z[:, 1], bins=[edges, edges])
    dens = gaussian_filter(H, sigma=(h[0] / w, h[1] / w), mode="constant", truncate=4.0)
    dens /= z.shape[0] * w * w
    idx = pad + sub * np.arange(grid_n)
    return dens[np.ix_(idx, idx)]


def _ring_slopes(grid, p, valid, radius, spacing):
    r = np.linalg.norm(grid, axis=-1)
    y = -np.log(np.where(valid, p, 1.0))
    ann = (r >= 0.5) & (r <= radius)
    ring = np.floor((r - 0.5) / spacing).astype(int)
    lo_pts, hi_all, hi_complete = [], [], []
    for k in np.unique(ring[ann]):
        sel = ann & (ring == k)
        ok = sel & valid
        if not np.any(ok):
            continue
        r2 = float(np.mean(r[ok] ** 2))
        lo_pts.append((r2, float(np.min(y[ok]))))
        hi_all.append((r2, float(np.max(y[ok]))))
        if np.all(valid[sel]):
            hi_complete.append(hi_all[-1])
    if len(lo_pts) < 2:
        raise InsufficientSamples("fewer than two resolvable rings in the fitting annulus")
    hi = hi_complete if len(hi_complete) >= 3 else hi_all

    def slope(pts):
        a = np.asarray(pts)
        return float(np.polyfit(a[:, 0], a[:, 1], 1)[0])

    return slope(hi), slope(lo_pts)


def _fit(z, radius, grid_n, h):
    n = z.shape[0]
    axis = np.linspace(-radius, radius, grid_n)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
    p = _binned_kde(z, radius, grid_n, h).reshape(-1)
    floor = 10.0 / (n * h[0] * h[1])
    valid = p > floor
    La, Lb = _ring_slopes(grid, p, valid, radius, axis[1] - axis[0])
    L1, L2 = max(La, Lb), min(La, Lb)
    r2 = np.sum(grid**2, axis=-1)[valid]
    K1 = float(np.min(p[valid] * np.exp(L1 * r2)))
    K2 = float(np.max(p[valid] * np.exp(L2 * r2)))
    return grid, p, valid, floor, K1, L1, K2, L2


def density_fit(
    samples,
    grid_radius: float = 2.0,
    grid_n: int = 41,
    bandwidth_scale: float = 1.0,
    sensitivity: bool = True,
    flat_tail: float = 0.05,
) -> DensityFit:
    """Fit Gaussian lower and upper envelopes to a kernel density estimate.

    ``L1`` (``L2``) is the least-squares slope against ``|z|^2`` of the
    per-ring maximum (minimum) of ``-log p_hat`` over the annulus
    ``0.5 <= |z| <= grid_radius``; ``L1`` uses only rings that lie entirely
    above the noise floor when at least three exist.  ``K1`` and ``K2`` are
    then the extreme constants keeping both envelopes valid on the grid.
    ``gaussian_tail`` is False when ``L2 < flat_tail``.
    """
    z = np.asarray(samples, dtype=float)
    z = z[np.all(np.isfinite(z), axis=-1)]
    if z.shape[0] < 10_000:
        raise InsufficientSamples(f"density fit needs >= 1e4 samples, got {z.shape[0]}")
    if grid_radius < 0.5:
        raise ConfigError("grid_radius below 0.5 leaves the fitting annulus empty")
    if grid_n < 5:
        raise ConfigError("grid_n must be at least 5")
    if grid_n % 2 == 0:
        grid_n += 1  # keep the origin on the grid
    h = _silverman(z) * bandwidth_scale
    grid, p, valid, floor, K1, L1, K2, L2 = _fit(z, grid_radius, grid_n, h)
    sens = {}
    if sensitivity:
        for s in (0.5, 2.0):
            try:
                r = _fit(z, grid_radius, grid_n, h * s)
                sens[s] = {"K1": r[4], "L1": r[5], "K2": r[6], "L2": r[7]}
            except (ConfigError, InsufficientSamples) as exc:
                log.info("bandwidth sensitivity at %gx skipped: %s", s, exc)
    tail = L2 >= flat_tail
    if not tail:
        log.warning("non-Gaussian tail: fitted L2 = %.3g is close to zero", L2)
    return DensityFit(
        grid=grid,
        p_hat=p,
        K1=K1,
        L1=L1,
        K2=K2,
        L2=L2,
        bandwidth=(float(h[0]), float(h[1])),
        noise_floor=floor,
        valid=valid,
        n_samples=z.shape[0],
        gaussian_tail=tail,
        sensitivity=sens,
    )
