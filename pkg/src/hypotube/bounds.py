"""Explicit tube bound formulas and the adaptive concatenation grid.

With ``H_t = K (mu n_t / lambda_t)^q`` the lower tube bound is
``exp(-int_0^T H_t (1/h + 1/R + phi_t^2) dt)`` and, for ``R <= R_*``, the
upper bound is ``exp(-int_0^T H_t^{-1} ... )`` with rate
``g_R = (1/K)(lambda_t/(mu n_t))^q (1/R + phi_t^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import ConfigError, DegenerateRate, ValidityError
from .model import DiffusionModel, hypothesis_profile
from .skeleton import Control, SkeletonPath

__all__ = [
    "BoundConstants",
    "Profiles",
    "GridSpec",
    "rate_f",
    "rate_g",
    "integrate_rate",
    "build_grid",
    "tube_lower_bound",
    "tube_upper_bound",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class BoundConstants:
    K: float = 1.0
    q: float = 1.0
    mu: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        if self.K < 1 or self.q < 1 or self.mu < 1 or not self.h > 0:
            raise ConfigError("bound constants need K, q, mu >= 1 and h > 0")


@dataclass(frozen=True)
class Profiles:
    """``n_t``, ``lambda_t`` sampled at ``times`` (linear in between) and the control."""

    times: np.ndarray
    n: np.ndarray
    lam: np.ndarray
    phi: Control

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        n = np.broadcast_to(np.asarray(self.n, dtype=float), t.shape)
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), t.shape)
        if np.any(n < 1) or np.any((lam <= 0) | (lam > 1)):
            raise ConfigError("profiles need n >= 1 and lambda in (0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def constant(cls, n: float, lam: float, phi: Control) -> "Profiles":
        return cls(np.array([0.0]), np.array([n]), np.array([lam]), phi)

    @classmethod
    def from_skeleton(cls, model: DiffusionModel, path: SkeletonPath, n_points: int = 65) -> "Profiles":
        """Unit-ball hypothesis profile at ``n_points`` skeleton nodes."""
        idx = np.unique(np.linspace(0, path.times.size - 1, n_points).round().astype(int))
        prof = hypothesis_profile(model, path.points[idx])
        return cls(path.times[idx], np.maximum(prof.n, 1.0), np.minimum(prof.lam, 1.0), path.control)

    def n_at(self, t):
        return np.interp(t, self.times, self.n)

    def lam_at(self, t):
        return np.interp(t, self.times, self.lam)

    def nodes(self, t0: float, t1: float) -> np.ndarray:
        """Break points on ``[t0, t1]`` where the integrands may kink."""
        inner = np.concatenate([self.phi.grid, self.times])
        inner = inner[(inner > t0) & (inner < t1)]
        return np.unique(np.concatenate([[t0, t1], inner]))


def _check_R(R):
    if not (0 < R <= 1):
        raise ConfigError(f"R must lie in (0, 1], got {R!r}")


def rate_f(c: BoundConstants, R: float, prof: Profiles, t):
    """``K (mu n_t / lambda_t)^q (1/h + 1/R + phi_t^2)``."""
    _check_R(R)
    H = c.K * (c.mu * prof.n_at(t) / prof.lam_at(t)) ** c.q
    return H * (1.0 / c.h + 1.0 / R + prof.phi(t) ** 2)


def rate_g(c: BoundConstants, R: float, prof: Profiles, t):
    """``(1/K) (lambda_t / (mu n_t))^q (1/R + phi_t^2)``."""
    _check_R(R)
    H = (prof.lam_at(t) / (c.mu * prof.n_at(t))) ** c.q / c.K
    return H * (1.0 / R + prof.phi(t) ** 2)


def integrate_rate(rate: Callable, prof: Profiles, t0: float, t1: float) -> float:
    """Gauss-Legendre on each piece between knots; exact for constant profiles."""
    if t1 <= t0:
        return 0.0
    nodes = prof.nodes(t0, t1)
    a, b = nodes[:-1, None], nodes[1:, None]
    t = (a + b) / 2 + (b - a) / 2 * _GL_NODES
    vals = rate(t.ravel()).reshape(t.shape)
    return float(np.sum((b - a)[:, 0] / 2 * (vals @ _GL_WEIGHTS)))


def tube_lower_bound(c: BoundConstants, R: float, prof: Profiles, T: float, t0: float = 0.0) -> float:
    return float(np.exp(-integrate_rate(lambda t: rate_f(c, R, prof, t), prof, t0, T)))


def tube_upper_bound(
    c: BoundConstants, R: float, prof: Profiles, T: float, R_star: float, t0: float = 0.0
) -> float:
    if R > R_star:
        raise ValidityError(R, R_star)
    return float(np.exp(-integrate_rate(lambda t: rate_g(c, R, prof, t), prof, t0, T)))


@dataclass
class GridSpec:
    """Knots ``0 = t_0 < t_1 < ...`` with unit rate mass per interior interval.

    ``knots`` ends at ``T`` when the final partial interval is kept
    (``last_partial``); ``n_complete`` counts the unit intervals.
    """

    knots: np.ndarray
    integrals: np.ndarray
    n_complete: int
    last_partial: bool
    T: float

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.knots)


def build_grid(
    rate: Callable[[float], float],
    T: float,
    breakpoints: Optional[Sequence[float]] = None,
    tol: float = 1e-10,
    max_knots: int = 100_000,
) -> GridSpec:
    """Successive knots with ``int_{t_k}^{t_{k+1}} rate = 1``.

    Integrals use adaptive quadrature (split at ``breakpoints``) and each
    knot is located by Brent's method.  A remainder below one is kept as a
    final partial interval ending at ``T``.  Raises :class:`DegenerateRate`
    if the rate vanishes on a suffix, with the knots found so far attached.
    """
    if T <= 0:
        raise ConfigError("T must be positive")
    bps = np.asarray(sorted(breakpoints or []), dtype=float)

    def mass(a, b):
        pts = bps[(bps > a) & (bps < b)]
        val, _ = quad(rate, a, b, points=pts if pts.size else None, limit=200, epsabs=tol * 1e-2, epsrel=1e-13)
        return val

    knots, ints = [0.0], []
    t = 0.0
    while T - t > 1e-12 * T:
        rest = mass(t, T)
        if abs(rest - 1.0) <= tol:
            # earliest time the mass is reached; a flat suffix must not hide it
            s = brentq(lambda u: mass(t, u) - (1.0 - tol / 2), t, T, xtol=1e-14, rtol=1e-15, maxiter=200)
            if T - s <= 1e-9 * T:
                knots.append(T)
                ints.append(rest)
                break
            knots.append(s)
            ints.append(mass(t, s))
            t = s
            continue
        if rest <= tol:
            err = DegenerateRate(f"rate vanishes on [{t:g}, {T:g}]")
            err.grid = GridSpec(np.asarray(knots), np.asarray(ints), len(ints), False, T)
            raise err
        if rest < 1.0:
            knots.append(T)
            ints.append(rest)
            return GridSpec(np.asarray(knots), np.asarray(ints), len(ints) - 1, True, T)
        s = brentq(lambda u: mass(t, u) - 1.0, t, T, xtol=1e-14, rtol=1e-15, maxiter=200)
        knots.append(s)
        ints.append(mass(t, s))
        t = s
        if len(knots) > max_knots:
            raise ConfigError(f"grid exceeds {max_knots} knots; rate too large")
    return GridSpec(np.asarray(knots), np.asarray(ints), len(ints), False, T)
