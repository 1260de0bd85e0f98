"""Control distance ``d_c`` for ``dv = A(v) phi ds`` and its comparison with ``d``.

``d_c(x, y)`` is the infimum of ``||phi||_(1,3) = (int phi1^2 + |phi2|^{2/3})^{1/2}``
over unit-time controls steering ``x`` to ``y``.  Only upper bounds are
computable: :func:`dc_estimate` returns the cost of a feasible control.
Because ``|phi2|^{2/3}`` is concave, concentrating ``phi2`` on fewer
intervals is cheaper, so the achievable bound depends on the number of
intervals ``N`` (roughly a factor ``N^{-1/6}`` on the bracket part).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainExit, NewtonFailure, Unreachable
from .model import DiffusionModel, as_point
from .norms import inverse2, quasi_distance
from .rng import thread_count

__all__ = [
    "Control2",
    "DcResult",
    "norm_13",
    "shoot",
    "dc_estimate",
    "rho2_estimate",
    "Rho2Result",
    "EquivalenceRow",
    "equivalence_report",
]


@dataclass(frozen=True)
class Control2:
    """Pair control on ``[0, 1]``, constant on each grid interval."""

    grid: np.ndarray
    values: np.ndarray  # (N, 2)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g[0] != 0.0 or abs(g[-1] - 1.0) > 1e-12 or np.any(np.diff(g) <= 0):
            raise ConfigError("Control2 grid must increase from 0 to 1")
        if v.shape != (g.size - 1, 2) or not np.all(np.isfinite(v)):
            raise ConfigError("Control2 needs one finite pair per interval")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, values) -> "Control2":
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(np.linspace(0.0, 1.0, v.shape[0] + 1), v)

    @classmethod
    def constant(cls, theta, N: int = 1) -> "Control2":
        return cls.uniform(np.tile(np.asarray(theta, dtype=float), (N, 1)))

    def refine(self) -> "Control2":
        """Split every interval in two (same function, twice the knots)."""
        mid = (self.grid[:-1] + self.grid[1:]) / 2
        g = np.sort(np.concatenate([self.grid, mid]))
        return Control2(g, np.repeat(self.values, 2, axis=0))


def _norm13_sq(dt, values):
    return np.sum(dt * (values[..., 0] ** 2 + np.abs(values[..., 1]) ** (2.0 / 3.0)), axis=-1)


def norm_13(phi: Control2) -> float:
    """``(int_0^1 phi1^2 + |phi2|^{2/3})^{1/2}``, exact for piecewise constants."""
    return float(np.sqrt(_norm13_sq(np.diff(phi.grid), phi.values)))


def _fields(model, V):
    """``sigma`` and ``[b, sigma]`` without domain checks (batched)."""
    s = model.sigma.value(V)
    b = model.b.value(V)
    br = np.einsum("...ij,...j->...i", model.b.jacobian(V), s) - np.einsum(
        "...ij,...j->...i", model.sigma.jacobian(V), b
    )
    return s, br


def _shoot_batch(model, x, dt, values, steps):
    """RK4 endpoints for a batch of controls ``values`` with shape ``(B, N, 2)``.

    Trajectories leaving the domain end as NaN.
    """
    B, N, _ = values.shape
    V = np.broadcast_to(as_point(x), (B, 2)).copy()
    ok = np.ones(B, dtype=bool)
    safe = as_point(x)

    def f(U, p):
        good = model.domain.contains(U) & np.all(np.isfinite(U), axis=-1)
        U = np.where(good[:, None], U, safe)
        s, br = _fields(model, U)
        return s * p[:, :1] + br * p[:, 1:], good

    for k in range(N):
        h = dt[k] / steps
        p = values[:, k, :]
        for _ in range(steps):
            k1, g1 = f(V, p)
            k2, g2 = f(V + 0.5 * h * k1, p)
            k3, g3 = f(V + 0.5 * h * k2, p)
            k4, g4 = f(V + h * k3, p)
            V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            ok &= g1 & g2 & g3 & g4 & model.domain.contains(V)
    V[~ok] = np.nan
    return V


def shoot(model: DiffusionModel, x, phi: Control2, steps: int = 8) -> np.ndarray:
    """End point ``v_1`` of ``dv = sigma(v) phi1 + [b, sigma](v) phi2``, ``v_0 = x``."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    x = as_point(x)
    model.require(x)
    v = _shoot_batch(model, x, np.diff(phi.grid), phi.values[None], steps)[0]
    if not np.all(np.isfinite(v)):
        raise DomainExit(float("nan"))
    A = model.A(v)
    inverse2(A)  # raises SingularFrame at a degenerate end point
    return v


# --------------------------------------------------------------------- rho_2


@dataclass
class Rho2Result:
    value: float
    theta: np.ndarray
    iterations: int


def _newton_constant(model, x, y, steps, max_iter=60, tol=1e-13):
    x, y = as_point(x), as_point(y)
    scale = 1.0 + np.linalg.norm(y - x)
    theta = inverse2(model.A(x)) @ (y - x)
    one = np.ones(1)

    def F(th):
        th = np.atleast_2d(th)
        return _shoot_batch(model, x, one, th[:, None, :], steps) - y

    r = F(theta)[0]
    for it in range(max_iter):
        err = np.linalg.norm(r)
        if err <= tol * scale:
            return theta, it
        eps = 1e-7 * max(1.0, np.max(np.abs(theta)))
        probes = theta + eps * np.eye(2)
        J = (F(probes) - r).T / eps  # columns: d F / d theta_j
        if not np.all(np.isfinite(J)):
            break
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-6:
            cand = theta + lam * step
            rc = F(cand)[0]
            if np.all(np.isfinite(rc)) and np.linalg.norm(rc) < err:
                theta, r = cand, rc
                break
            lam /= 2
        else:
            break
    if np.linalg.norm(r) <= tol * scale * 1e3:
        return theta, max_iter
    raise NewtonFailure(f"constant-control Newton did not converge (residual {np.linalg.norm(r):.3e})")


def rho2_estimate(model: DiffusionModel, x, y, steps: int = 64) -> Rho2Result:
    """``max(|theta1|, |theta2|^{1/3})`` for the constant control ``theta`` hitting ``y``."""
    x, y = as_point(x), as_point(y)
    model.require(x)
    model.require(y)
    if np.array_equal(x, y):
        return Rho2Result(0.0, np.zeros(2), 0)
    theta, it = _newton_constant(model, x, y, steps)
    return Rho2Result(float(max(abs(theta[0]), abs(theta[1]) ** (1.0 / 3.0))), theta, it)


# ----------------------------------------------------------------------- d_c


@dataclass
class DcResult:
    upper_bound: float
    endpoint_gap: float
    control: Control2
    restarts_used: int
    best_restart: int


def _descend(model, x, y, dt, phi, steps, w, step, max_iter, cost_scale):
    """Greedy coordinate descent on ``||phi||^2 + w |shoot - y|^2``.

    Each sweep evaluates every single-coordinate move of size ``+-step`` in
    one batch and takes the best improving one; a failed sweep halves the
    steps, a successful move doubles that coordinate's step.
    """
    N = phi.shape[0]
    n_coord = 2 * N

    def J(vals):
        end = _shoot_batch(model, x, dt, vals, steps)
        gap = np.sum((end - y) ** 2, axis=-1)
        out = _norm13_sq(dt, vals) + w * gap
        return np.where(np.isfinite(out), out, np.inf)

    cur = J(phi[None])[0]
    step = step.copy()
    floor = step * 1e-6
    eye = np.zeros((n_coord, N, 2))
    eye[np.arange(n_coord), np.arange(n_coord) // 2, np.arange(n_coord) % 2] = 1.0
    for _ in range(max_iter):
        moves = np.concatenate([eye * step[:, None, None], -eye * step[:, None, None]])
        cand = phi[None] + moves
        vals = J(cand)
        i = int(np.argmin(vals))
        if vals[i] < cur - 1e-16 * cost_scale:
            phi, cur = cand[i], vals[i]
            step[i % n_coord] *= 2.0
        else:
            step *= 0.5
            if np.all(step < floor):
                break
    return phi


def _restore(model, x, y, dt, phi, steps, tol, max_iter=40):
    """Two-parameter Newton making ``shoot(phi) = y``.

    ``phi1`` is shifted uniformly; ``phi2`` is shifted on the interval
    carrying its largest magnitude, preserving its concentration.
    """
    k = int(np.argmax(np.abs(phi[:, 1])))
    basis = np.zeros((2,) + phi.shape)
    basis[0, :, 0] = 1.0
    basis[1, k, 1] = 1.0

    def end(c):
        c = np.atleast_2d(c)
        return _shoot_batch(model, x, dt, phi[None] + np.einsum("bi,i...->b...", c, basis), steps)

    c = np.zeros(2)
    r = end(c)[0] - y
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            break
        eps = 1e-7 * max(1.0, np.max(np.abs(phi)))
        J = (end(c + eps * np.eye(2)) - y - r).T / eps
        try:
            d = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam > 1e-6:
            rc = end(c + lam * d)[0] - y
            if np.all(np.isfinite(rc)) and np.linalg.norm(rc) < np.linalg.norm(r):
                c, r = c + lam * d, rc
                break
            lam /= 2
        else:
            return None
    if not np.linalg.norm(r) <= tol:
        return None
    return phi + np.einsum("i,i...->...", c, basis), float(np.linalg.norm(r))


def _initial_guesses(theta, N, restarts, warm_start):
    guesses = [np.tile(theta, (N, 1)), np.tile([theta[0], 0.0], (N, 1)), np.tile([0.0, theta[1]], (N, 1))]
    for j in np.unique(np.linspace(0, N - 1, max(restarts - 3, 0)).round().astype(int)):
        g = np.tile([theta[0], 0.0], (N, 1))
        g[j, 1] = N * theta[1]
        guesses.append(g)
    guesses = guesses[: max(restarts, 1)]
    if warm_start is not None:
        guesses.insert(0, warm_start)
    return guesses


def dc_estimate(
    model: DiffusionModel,
    x,
    y,
    N: int = 16,
    restarts: int = 6,
    penalty_schedule: Sequence[float] = (1e2, 1e4, 1e6),
    steps: int = 1,
    max_iter: int = 40,
    verify_steps: int = 8,
    polish_best: int = 2,
    warm_start: Optional[Control2] = None,
    threads: Optional[int] = 1,
) -> DcResult:
    """Certified upper bound on ``d_c(x, y)`` from a feasible ``N``-interval control.

    Initial guesses: the constant control hitting ``y`` exactly, the two
    single-direction constant controls, and controls whose ``phi2`` sits on
    one interval.  Every guess is first made feasible to ``1e-6 (1 + |y - x|)``
    by a two-parameter Newton correction; the ``polish_best`` cheapest are
    then improved by penalised coordinate descent through
    ``penalty_schedule`` (on a ``steps``-per-interval RK4 shoot) and made
    feasible again, keeping whichever is cheaper.  Feasibility is always
    judged with ``verify_steps`` RK4 steps per interval.  A ``warm_start`` (on a grid that refines to
    ``N`` uniform intervals) enters as restart 0, so refining never loses
    ground.  Ties are broken by restart index.
    """
    x, y = as_point(x), as_point(y)
    model.require(x)
    model.require(y)
    if N < 1 or restarts < 1:
        raise ConfigError("N and restarts must be positive")
    tol = 1e-6 * (1.0 + np.linalg.norm(y - x))
    grid = np.linspace(0.0, 1.0, N + 1)
    dt = np.diff(grid)
    if np.array_equal(x, y):
        return DcResult(0.0, 0.0, Control2(grid, np.zeros((N, 2))), 0, 0)
    try:
        theta, _ = _newton_constant(model, x, y, 8 * verify_steps)
    except NewtonFailure:
        theta = inverse2(model.A(x)) @ (y - x)
    ws = None
    if warm_start is not None:
        wc = warm_start
        while wc.values.shape[0] < N:
            wc = wc.refine()
        if wc.values.shape[0] != N or not np.allclose(wc.grid, grid):
            raise ConfigError("warm start does not refine to the requested grid")
        ws = wc.values
    guesses = _initial_guesses(theta, N, restarts, ws)
    rho = max(abs(theta[0]), abs(theta[1]) ** (1 / 3), 1e-12)
    dist = np.linalg.norm(y - x)

    def feasible(phi):
        fixed = _restore(model, x, y, dt, phi, verify_steps, tol)
        if fixed is None:
            return None
        phi, gap = fixed
        return float(np.sqrt(_norm13_sq(dt, phi))), gap, phi

    def polish(phi):
        base = np.array([max(np.max(np.abs(phi[:, 0])), rho), max(np.max(np.abs(phi[:, 1])), rho**3)])
        step0 = np.tile(0.05 * base, N)
        for w in penalty_schedule:
            wn = w * rho**2 / dist**2  # relative gap 1/sqrt(w) costs as much as the control
            phi = _descend(model, x, y, dt, phi, steps, wn, step0, max_iter, rho**2)
            step0 = step0 * 0.1
        return feasible(phi)

    workers = min(thread_count(threads), len(guesses))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    mapper = pool.map if pool else map
    try:
        results = list(mapper(feasible, [g.astype(float) for g in guesses]))
        ranked = sorted((r[0], i) for i, r in enumerate(results) if r is not None)
        top = [i for _, i in ranked[:polish_best]]
        for i, r in zip(top, mapper(polish, [results[i][2] for i in top])):
            if r is not None and r[0] < results[i][0]:
                results[i] = r
    finally:
        if pool:
            pool.shutdown()
    feasible_runs = [(r[0], i, r) for i, r in enumerate(results) if r is not None]
    if not feasible_runs:
        raise Unreachable(f"no restart reached {y} within {tol:.2e}")
    cost, idx, (c, gap, phi) = min(feasible_runs, key=lambda t: (t[0], t[1]))
    return DcResult(cost, gap, Control2(grid, phi), len(guesses), idx)


# --------------------------------------------------------------- equivalence


@dataclass
class EquivalenceRow:
    direction: int
    angle: float
    radius: float
    d: float
    d_saturated: bool
    dc_upper: float
    rho2: float

    @property
    def ratio(self) -> float:
        return self.d / self.dc_upper


def equivalence_report(
    model: DiffusionModel,
    x,
    sample_directions: Sequence,
    radii: Sequence[float],
    N: int = 16,
    restarts: int = 6,
) -> list[EquivalenceRow]:
    """``d``, the ``d_c`` upper bound and ``rho_2`` at ``y = x + r u`` for each pair."""
    x = as_point(x)
    rows = []
    for j, u in enumerate(sample_directions):
        u = np.asarray(u, dtype=float)
        u = u / np.linalg.norm(u)
        for r in radii:
            y = x + r * u
            qd = quasi_distance(model, x, y)
            dc = dc_estimate(model, x, y, N=N, restarts=restarts)
            rho = rho2_estimate(model, x, y)
            rows.append(
                EquivalenceRow(j, float(np.arctan2(u[1], u[0])), float(r), qd.value, qd.saturated, dc.upper_bound, rho.value)
            )
    return rows
