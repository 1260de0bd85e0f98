"""Skeleton paths ``dx = sigma(x) phi_t dt + b(x) dt`` under piecewise-constant controls.

Also hosts the control energy functional, the growth-class ``L(mu, h)`` test
and the validity threshold ``R_*`` of the upper tube bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainExit, GridTooCoarse, RangeError, StepFailure
from .model import DiffusionModel, as_point

__all__ = [
    "Control",
    "SkeletonPath",
    "parse_control",
    "solve_skeleton",
    "skeleton_at",
    "energy",
    "GrowthCheck",
    "growth_class_check",
    "unit_energy_window",
    "r_star",
]

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class Control:
    """Scalar control, constant on ``[grid[k], grid[k+1])``."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise ConfigError("control grid must start at 0 and be strictly increasing")
        if v.shape != (g.size - 1,) or not np.all(np.isfinite(v)):
            raise ConfigError("control needs one finite value per grid interval")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @classmethod
    def constant(cls, c: float, T: float) -> "Control":
        return cls(np.array([0.0, T]), np.array([float(c)]))

    @classmethod
    def zero(cls, T: float) -> "Control":
        return cls.constant(0.0, T)

    @classmethod
    def from_pairs(cls, pairs, T: float) -> "Control":
        """``[(t0, v0), (t1, v1), ...]``: value ``v_k`` from ``t_k`` to the next knot."""
        knots = [float(t) for t, _ in pairs]
        return cls(np.array(knots + [float(T)]), np.array([float(v) for _, v in pairs]))

    def __call__(self, t):
        """Right-continuous evaluation; the last value extends to ``t = T``."""
        k = np.searchsorted(self.grid, t, side="right") - 1
        return self.values[np.clip(k, 0, self.values.size - 1)]

    def restrict(self, T: float) -> "Control":
        """The same control on ``[0, T]`` with ``0 < T <= self.T``."""
        if not (0 < T <= self.T * (1 + _TIME_EPS)):
            raise RangeError(f"cannot restrict a control on [0, {self.T:g}] to [0, {T:g}]")
        inner = self.grid[(self.grid > 0) & (self.grid < T)]
        g = np.concatenate([[0.0], inner, [T]])
        return Control(g, self(g[:-1]))

    def scaled(self, c: float) -> "Control":
        return Control(self.grid, c * self.values)

    def cumulative_energy(self, t):
        """``int_0^t phi^2``; exact because ``phi^2`` is piecewise constant."""
        cum = np.concatenate([[0.0], np.cumsum(self.values**2 * np.diff(self.grid))])
        return np.interp(t, self.grid, cum)

    def integrals(self, delta: float):
        """``(int_0^delta phi, int_0^delta (delta - s) phi ds)`` in closed form."""
        g = np.minimum(self.grid, delta)
        a, b = g[:-1], g[1:]
        first = np.sum(self.values * (b - a))
        second = np.sum(self.values * ((delta - a) ** 2 - (delta - b) ** 2) / 2)
        return float(first), float(second)


def parse_control(spec: str, T: float, n_intervals: int = 1000) -> Control:
    """Named presets: ``zero``, ``constant:c``, ``sine:a,omega``, or ``t:v;t:v;...``.

    The sine preset uses exact cell averages of ``a sin(omega t)``.
    """
    spec = spec.strip()
    try:
        if spec == "zero":
            return Control.zero(T)
        if spec.startswith("constant:"):
            return Control.constant(float(spec.split(":", 1)[1]), T)
        if spec.startswith("sine:"):
            a, w = (float(s) for s in spec.split(":", 1)[1].split(","))
            g = np.linspace(0.0, T, n_intervals + 1)
            if w == 0:
                return Control(g, np.zeros(n_intervals))
            avg = a * (np.cos(w * g[:-1]) - np.cos(w * g[1:])) / (w * np.diff(g))
            return Control(g, avg)
        pairs = [tuple(float(u) for u in item.split(":")) for item in spec.split(";") if item]
        return Control.from_pairs(pairs, T)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse control {spec!r}: {exc}") from None


@dataclass(frozen=True)
class SkeletonPath:
    times: np.ndarray
    points: np.ndarray
    control: Control

    def at(self, t) -> np.ndarray:
        """Componentwise linear interpolation between stored nodes."""
        return np.stack([np.interp(t, self.times, self.points[:, i]) for i in range(2)], -1)


def _rk4(model, x, c, h, n):
    """``n`` RK4 steps of size ``h`` for ``x' = c sigma(x) + b(x)``; returns all nodes."""

    def f(y):
        return c * model.sigma.value(y) + model.b.value(y)

    out = np.empty((n + 1, 2))
    out[0] = x
    for i in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = x
    return out


def _check_nodes(model, t0, h, nodes):
    inside = model.domain.contains(nodes)
    if not np.all(inside) or not np.all(np.isfinite(nodes)):
        k = int(np.argmin(inside & np.all(np.isfinite(nodes), axis=-1)))
        raise DomainExit(t0 + k * h, nodes[k])


def solve_skeleton(
    model: DiffusionModel,
    x0,
    phi: Control,
    steps_per_knot: int = 8,
    rtol: float = 1e-6,
    max_halvings: int = 16,
) -> SkeletonPath:
    """RK4 on each control interval, refined by step halving.

    An interval is accepted once the end point computed with ``n`` and ``2n``
    steps differs by at most ``rtol`` relative; the finer solution is kept.
    """
    if steps_per_knot < 1:
        raise ConfigError("steps_per_knot must be >= 1")
    x = as_point(x0)
    model.require(x)
    times, points = [0.0], [x]
    for k, c in enumerate(phi.values):
        t0, t1 = phi.grid[k], phi.grid[k + 1]
        n = steps_per_knot
        coarse = _rk4(model, x, c, (t1 - t0) / n, n)
        _check_nodes(model, t0, (t1 - t0) / n, coarse)
        for _ in range(max_halvings):
            fine = _rk4(model, x, c, (t1 - t0) / (2 * n), 2 * n)
            _check_nodes(model, t0, (t1 - t0) / (2 * n), fine)
            scale = max(np.linalg.norm(fine[-1]), np.linalg.norm(x), 1e-300)
            if np.linalg.norm(fine[-1] - coarse[-1]) <= rtol * scale:
                break
            n, coarse = 2 * n, fine
        else:
            raise StepFailure(f"no convergence on [{t0:g}, {t1:g}] after {max_halvings} halvings")
        times.extend(np.linspace(t0, t1, 2 * n + 1)[1:])
        points.extend(fine[1:])
        x = fine[-1]
    return SkeletonPath(np.asarray(times), np.asarray(points), phi)


def skeleton_at(model: DiffusionModel, x0, phi: Control, times, substeps: int = 4) -> np.ndarray:
    """Skeleton values at prescribed increasing ``times`` (control knots merged in).

    Each gap between consecutive merged nodes gets ``substeps`` RK4 steps.
    Used for pathwise monitoring, where the skeleton is needed on the
    simulation grid itself.
    """
    times = np.asarray(times, dtype=float)
    merged = np.union1d(times, phi.grid[(phi.grid > times[0]) & (phi.grid < times[-1])])
    x = as_point(x0)
    model.require(x)
    vals = np.empty((merged.size, 2))
    vals[0] = x
    for i in range(merged.size - 1):
        t0, t1 = merged[i], merged[i + 1]
        c = phi(0.5 * (t0 + t1))
        nodes = _rk4(model, x, c, (t1 - t0) / substeps, substeps)
        _check_nodes(model, t0, (t1 - t0) / substeps, nodes)
        x = nodes[-1]
        vals[i + 1] = x
    idx = np.searchsorted(merged, times)
    return vals[idx]


def energy(phi: Control, t: float, delta: float) -> float:
    """``(int_t^{t+delta} phi^2)^{1/2}``, exact for piecewise-constant controls."""
    if delta < 0 or t < -_TIME_EPS or t + delta > phi.T * (1 + _TIME_EPS) + _TIME_EPS:
        raise RangeError(f"window [{t:g}, {t + delta:g}] not inside [0, {phi.T:g}]")
    v = phi.cumulative_energy(t + delta) - phi.cumulative_energy(t)
    return float(np.sqrt(max(v, 0.0)))


@dataclass
class GrowthCheck:
    passed: bool
    worst_ratio: float
    witness: Optional[tuple] = None  # (s, t) with f(t) > mu f(s), or None

    def __bool__(self):
        return self.passed


def growth_class_check(f_samples, dt: float, mu: float, h: float, tol: float = 1e-12) -> GrowthCheck:
    """Test ``f(t) <= mu f(s)`` for every sample pair with ``|t - s| <= h``.

    ``f_samples`` lives on the uniform grid ``k * dt``.  On failure the
    witness is the pair with the largest ratio ``f(t)/f(s)``, ties going to
    the earliest time.
    """
    f = np.asarray(f_samples, dtype=float)
    if mu < 1 or h <= 0 or dt <= 0:
        raise ConfigError("need mu >= 1, h > 0, dt > 0")
    if np.any(f < 0):
        raise ConfigError("growth class is defined for nonnegative functions")
    if dt > h / 4:
        raise GridTooCoarse(f"sample spacing {dt:g} exceeds h/4 = {h / 4:g}")
    K = min(int(np.floor(h / dt + 1e-9)), f.size - 1)
    worst, cands = 0.0, []
    for k in range(1, K + 1):
        a, b = f[:-k], f[k:]
        for num, den, forward in ((b, a, True), (a, b, False)):
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
            worst = max(worst, float(np.max(r)))
            bad = np.flatnonzero(num > mu * den * (1 + tol))
            if bad.size:
                rb = r[bad]
                i = int(bad[np.flatnonzero(rb >= rb.max() * (1 - tol))[0]])
                s, t = (i, i + k) if forward else (i + k, i)
                cands.append((float(r[i]), min(s, t), s, t))
    witness = None
    if cands:
        top = max(c[0] for c in cands)
        ties = [c for c in cands if c[0] >= top * (1 - tol)]
        _, _, s, t = min(ties, key=lambda c: (c[1], c[2]))
        witness = (s * dt, t * dt)
    return GrowthCheck(passed=witness is None, worst_ratio=worst, witness=witness)


def unit_energy_window(phi: Control) -> float:
    """Shortest ``delta`` with ``int_t^{t+delta} phi^2 >= 1`` for some ``t``.

    The window length is piecewise linear in ``t`` between the events where
    either end crosses a knot, so the minimum is attained at a start or an
    end on a knot.  Returns ``inf`` when the total energy is below one.
    """
    g = phi.grid
    cum = np.concatenate([[0.0], np.cumsum(phi.values**2 * np.diff(g))])
    if cum[-1] < 1.0:
        return np.inf

    def first_reach(level):
        # smallest s with C(s) >= level
        k = np.searchsorted(cum, level, side="left")
        k = np.clip(k, 1, g.size - 1)
        rate = phi.values[k - 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            s = g[k - 1] + np.where(rate > 0, (level - cum[k - 1]) / rate, 0.0)
        return np.where(level <= 0, 0.0, np.minimum(s, g[k]))

    def last_below(level):
        # largest s with C(s) <= level
        k = np.searchsorted(cum, level, side="right")
        k = np.clip(k, 1, g.size - 1)
        rate = phi.values[k - 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            s = g[k - 1] + np.where(rate > 0, (level - cum[k - 1]) / rate, g[k] - g[k - 1])
        return np.minimum(s, g[k])

    starts = g[cum <= cum[-1] - 1.0]
    w1 = first_reach(cum[np.searchsorted(g, starts)] + 1.0) - starts
    ends = g[cum >= 1.0]
    w2 = ends - last_below(cum[np.searchsorted(g, ends)] - 1.0)
    return float(min(np.min(w1, initial=np.inf), np.min(w2, initial=np.inf)))


def _sample_profile(profile, times):
    if callable(profile):
        return np.broadcast_to(np.asarray(profile(times), dtype=float), times.shape)
    return np.broadcast_to(np.asarray(profile, dtype=float), times.shape)


def r_star(
    phi: Control,
    n_profile: Callable | float,
    lambda_profile: Callable | float,
    mu: float,
    h: float,
    K: float = 1.0,
    q: float = 1.0,
    times=None,
) -> float:
    """``inf_t (lambda_t / (K mu n_t))^q * min(h, unit-energy window)``.

    Profiles are callables of ``t`` (or constants); the infimum is taken over
    ``times``, by default the control knots plus 1025 uniform points.
    """
    if K < 1 or q < 1 or mu < 1 or h <= 0:
        raise ConfigError("need K, q, mu >= 1 and h > 0")
    if times is None:
        times = np.union1d(phi.grid, np.linspace(0.0, phi.T, 1025))
    times = np.asarray(times, dtype=float)
    ratio = _sample_profile(lambda_profile, times) / (K * mu * _sample_profile(n_profile, times))
    return float(np.min(ratio) ** q * min(h, unit_energy_window(phi)))
