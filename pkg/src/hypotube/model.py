"""Diffusion coefficients, Lie brackets and the local hypotheses.

A model is a pair of planar vector fields ``sigma`` (the single noise
direction) and ``b`` (the drift), each carrying analytic first and second
derivatives.  All field callables broadcast over leading axes, so a batch of
points with shape ``(..., 2)`` maps to values ``(..., 2)`` and Jacobians
``(..., 2, 2)`` with ``J[..., i, j] = d f_i / d x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.stats import qmc

from .errors import ConfigError, DomainError, H3Violated, SingularSigma

__all__ = [
    "Box",
    "VectorField2",
    "DiffusionModel",
    "PolynomialField",
    "directional_derivative",
    "lie_bracket",
    "fd_jacobian",
    "check_H3",
    "H3Report",
    "hypothesis_profile",
    "HypothesisProfile",
    "asian",
    "counterexample",
    "asian_drift",
    "kolmogorov",
    "as_point",
    "unit_disk_samples",
    "constant_model",
    "polynomial_model",
    "get_model",
    "BUILTIN_MODELS",
]


def _vec(*comps):
    comps = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in comps])
    return np.stack(comps, axis=-1)


def _mat(a11, a12, a21, a22):
    """Stack 2x2 matrices from row-major entries, broadcasting shapes."""
    a11, a12, a21, a22 = np.broadcast_arrays(
        *[np.asarray(c, dtype=float) for c in (a11, a12, a21, a22)]
    )
    return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)


def as_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ConfigError(f"points must have a trailing axis of length 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("point coordinates must be finite")
    return x


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box ``[lo1, hi1] x [lo2, hi2]``."""

    lo: tuple
    hi: tuple

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def require(self, x):
        inside = self.contains(x)
        if not np.all(inside):
            bad = np.asarray(x, dtype=float).reshape(-1, 2)[~np.ravel(inside)][0]
            raise DomainError(f"point {tuple(bad)} outside domain {self.lo}..{self.hi}")

    def __str__(self):
        return f"[{self.lo[0]:g},{self.hi[0]:g}]x[{self.lo[1]:g},{self.hi[1]:g}]"


@dataclass(frozen=True)
class VectorField2:
    """A planar vector field with analytic derivatives.

    ``second`` returns ``H[..., i, j, k] = d^2 f_i / dx_j dx_k``; ``third`` is
    optional and only used when a derivative bound is computed automatically.
    """

    value: Callable
    jacobian: Callable
    second: Optional[Callable] = None
    third: Optional[Callable] = None
    domain: Optional[Box] = None

    def __call__(self, x):
        return self.value(x)

    def with_domain(self, domain: Box) -> "VectorField2":
        return VectorField2(self.value, self.jacobian, self.second, self.third, domain)

    def check_jacobian(self, x, rtol=1e-4, h=1e-6) -> bool:
        """Compare the analytic Jacobian with central differences at ``x``."""
        x = as_point(x)
        J = self.jacobian(x)
        Jfd = fd_jacobian(self.value, x, h=h)
        scale = np.maximum(np.abs(J), 1.0)
        return bool(np.all(np.abs(J - Jfd) <= rtol * scale))


def fd_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of ``f`` at a batch of points."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(2):
        e = np.zeros(2)
        step = h * np.maximum(1.0, np.abs(x[..., j]))[..., None]
        e[j] = 1.0
        cols.append((f(x + step * e) - f(x - step * e)) / (2 * step))
    return np.stack(cols, axis=-1)


def _check(fields, x):
    for f in fields:
        if f.domain is not None:
            f.domain.require(x)


def directional_derivative(f: VectorField2, g: VectorField2, x) -> np.ndarray:
    """Derivative of ``f`` in the direction ``g``: ``J_f(x) g(x)``."""
    x = as_point(x)
    _check((f, g), x)
    return np.einsum("...ij,...j->...i", f.jacobian(x), g.value(x))


def lie_bracket(f: VectorField2, g: VectorField2, x) -> np.ndarray:
    """``[f, g](x) = d_g f(x) - d_f g(x)``.

    ``lie_bracket(model.b, model.sigma, x)`` is the bracket ``[b, sigma]``
    that together with ``sigma`` spans the plane under the weak Hormander
    condition.
    """
    x = as_point(x)
    _check((f, g), x)
    Jf, Jg = f.jacobian(x), g.jacobian(x)
    fx, gx = f.value(x), g.value(x)
    return np.einsum("...ij,...j->...i", Jf, gx) - np.einsum("...ij,...j->...i", Jg, fx)


@dataclass(frozen=True)
class DiffusionModel:
    """Stratonovich SDE ``dX = sigma(X) o dW + b(X) dt`` in the plane.

    ``kappa_sigma`` and ``kappa_cubic`` are the scalar coefficients with
    ``d_sigma sigma = kappa * sigma`` and ``d_sigma d_sigma sigma =
    kappa_cubic * sigma`` (so ``kappa_cubic = d_sigma kappa + kappa**2``).
    When absent they are recovered from the derivatives of ``sigma``.
    """

    name: str
    sigma: VectorField2
    b: VectorField2
    domain: Box
    n_bound: Callable
    lambda_bound: Optional[Callable] = None
    kappa_sigma: Optional[Callable] = None
    kappa_cubic: Optional[Callable] = None
    h3: bool = True
    notes: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sigma", self.sigma.with_domain(self.domain))
        object.__setattr__(self, "b", self.b.with_domain(self.domain))

    def require(self, x):
        self.domain.require(x)

    def bracket(self, x) -> np.ndarray:
        """``[b, sigma](x)``."""
        return lie_bracket(self.b, self.sigma, x)

    def A(self, x) -> np.ndarray:
        """The 2x2 matrix with columns ``sigma(x)`` and ``[b, sigma](x)``."""
        x = as_point(x)
        return np.stack([self.sigma(x), self.bracket(x)], axis=-1)

    def d_b_sigma(self, x) -> np.ndarray:
        return directional_derivative(self.sigma, self.b, x)

    def d_sigma_sigma(self, x) -> np.ndarray:
        return directional_derivative(self.sigma, self.sigma, x)

    def d_sigma_d_sigma_sigma(self, x) -> np.ndarray:
        """``d_sigma (d_sigma sigma) = H[sigma, sigma] + J J sigma``."""
        x = as_point(x)
        if self.sigma.second is None:
            raise ConfigError(f"model {self.name!r} has no second derivative of sigma")
        s = self.sigma(x)
        J = self.sigma.jacobian(x)
        H = self.sigma.second(x)
        return np.einsum("...ijk,...j,...k->...i", H, s, s) + np.einsum(
            "...ij,...jk,...k->...i", J, J, s
        )

    def ito_drift(self, x) -> np.ndarray:
        """Drift of the equivalent Ito equation, ``b + d_sigma sigma / 2``."""
        x = np.asarray(x, dtype=float)
        J = self.sigma.jacobian(x)
        s = self.sigma.value(x)
        return self.b.value(x) + 0.5 * np.einsum("...ij,...j->...i", J, s)

    def lam(self, x) -> np.ndarray:
        """Lower bound ``lambda(x)`` in (0, 1]."""
        if self.lambda_bound is not None:
            return np.asarray(self.lambda_bound(x), dtype=float)
        from .norms import eig_bounds

        lo, _ = eig_bounds(self.A(x))
        return np.minimum(1.0, lo)

    def n(self, x) -> np.ndarray:
        return np.asarray(self.n_bound(x), dtype=float)

    def kappa(self, x) -> np.ndarray:
        if self.kappa_sigma is not None:
            return np.asarray(self.kappa_sigma(x), dtype=float) * np.ones(np.shape(x)[:-1])
        return _projection(self.d_sigma_sigma(x), self.sigma(x))

    def kappa3(self, x) -> np.ndarray:
        if self.kappa_cubic is not None:
            return np.asarray(self.kappa_cubic(x), dtype=float) * np.ones(np.shape(x)[:-1])
        return _projection(self.d_sigma_d_sigma_sigma(x), self.sigma(x))


def _projection(v, s):
    s2 = np.sum(s * s, axis=-1)
    if np.any(s2 == 0):
        raise SingularSigma("sigma vanishes; kappa is undefined")
    return np.sum(v * s, axis=-1) / s2


# ---------------------------------------------------------------- hypotheses


@dataclass
class H3Report:
    points: np.ndarray
    kappa: np.ndarray
    sine: np.ndarray


def check_H3(model: DiffusionModel, sample_points: Sequence, tol: float = 1e-8) -> H3Report:
    """Test collinearity of ``d_sigma sigma`` with ``sigma`` at each point.

    Returns the fitted ``kappa = <d_sigma sigma, sigma> / |sigma|^2``.  All
    violating points are collected into a single :class:`H3Violated`.
    """
    pts = as_point(np.atleast_2d(sample_points))
    model.require(pts)
    s = model.sigma(pts)
    ns = np.linalg.norm(s, axis=-1)
    if np.any(ns == 0):
        raise SingularSigma(f"sigma vanishes at {pts[ns == 0][0]}")
    v = model.d_sigma_sigma(pts)
    nv = np.linalg.norm(v, axis=-1)
    cross = np.abs(v[..., 0] * s[..., 1] - v[..., 1] * s[..., 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        sine = np.where(nv > 0, cross / (nv * ns), 0.0)
    bad = sine > tol
    if np.any(bad):
        raise H3Violated(pts[bad])
    kappa = np.sum(v * s, axis=-1) / ns**2
    return H3Report(points=pts, kappa=kappa, sine=sine)


@dataclass
class HypothesisProfile:
    """Per-point local bounds along a path: ``n_t`` (max) and ``lambda_t`` (min)."""

    points: np.ndarray
    n: np.ndarray
    lam: np.ndarray


def unit_disk_samples(n_samples=64, radius=1.0) -> np.ndarray:
    """Deterministic low-discrepancy points in the open disk (first is the centre)."""
    m = int(np.ceil(np.log2(max(n_samples, 2))))
    u = qmc.Sobol(d=2, scramble=False).random_base2(m)[:n_samples]
    r = radius * np.sqrt(u[:, 0]) * (1 - 1e-12)
    a = 2 * np.pi * u[:, 1]
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)


def hypothesis_profile(model: DiffusionModel, path, n_samples: int = 64) -> HypothesisProfile:
    """Sample the unit ball around each path point for ``max n`` and ``min lambda``."""
    if n_samples < 64:
        raise ConfigError("hypothesis_profile needs at least 64 samples per ball")
    pts = as_point(np.atleast_2d(getattr(path, "points", path)))
    disk = unit_disk_samples(n_samples)
    cloud = pts[:, None, :] + disk[None, :, :]
    model.require(cloud)
    n = np.max(model.n(cloud), axis=1)
    lam = np.min(model.lam(cloud), axis=1)
    return HypothesisProfile(points=pts, n=n, lam=lam)


# ------------------------------------------------------------ built-in models

_WIDE = Box((-1e6, -1e6), (1e6, 1e6))
_POSITIVE = Box((1e-6, -1e6), (1e6, 1e6))


def _zeros3(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1] + (2, 2, 2))


def asian() -> DiffusionModel:
    """``sigma = (x1, 0)``, ``b = (0, x1)``: the Asian-option pair."""
    sigma = VectorField2(
        value=lambda x: _vec(x[..., 0], 0.0 * x[..., 0]),
        jacobian=lambda x: _mat(1.0 + 0 * x[..., 0], 0.0, 0.0, 0.0),
        second=_zeros3,
        third=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2)),
    )
    b = VectorField2(
        value=lambda x: _vec(0.0 * x[..., 0], x[..., 0]),
        jacobian=lambda x: _mat(0.0 * x[..., 0], 0.0, 1.0, 0.0),
        second=_zeros3,
        third=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2)),
    )
    return DiffusionModel(
        name="asian",
        sigma=sigma,
        b=b,
        domain=_POSITIVE,
        n_bound=lambda x: 2.0 * np.abs(x[..., 0]) + 2.0,
        lambda_bound=lambda x: np.minimum(1.0, x[..., 0] ** 2),
        kappa_sigma=lambda x: 1.0,
        kappa_cubic=lambda x: 1.0,
        notes="A(x) = x1 * I; weak Hormander on x1 > 0",
    )


def asian_drift(mu0: float = 0.5) -> DiffusionModel:
    """``sigma = (x1, 0)``, ``b = (mu0 x1, x1)``; here ``d_b sigma = mu0 sigma``."""
    mu0 = float(mu0)
    s = np.sqrt(1.0 + mu0**2)
    sigma = asian().sigma
    b = VectorField2(
        value=lambda x: _vec(mu0 * x[..., 0], x[..., 0]),
        jacobian=lambda x: _mat(mu0 + 0 * x[..., 0], 0.0, 1.0, 0.0),
        second=_zeros3,
    )
    return DiffusionModel(
        name="asian-drift",
        sigma=VectorField2(sigma.value, sigma.jacobian, sigma.second, sigma.third),
        b=b,
        domain=_POSITIVE,
        n_bound=lambda x: (1.0 + s) * np.abs(x[..., 0]) + 1.0 + s,
        lambda_bound=lambda x: np.minimum(1.0, x[..., 0] ** 2),
        kappa_sigma=lambda x: 1.0,
        kappa_cubic=lambda x: 1.0,
        notes=f"mu0={mu0:g}; [b,sigma] = (0, x1)",
        params={"mu0": mu0},
    )


def counterexample() -> DiffusionModel:
    """``sigma = (1, 0)``, ``b = (0, x1^2)``: ``X2 = int (1 + W)^2 ds >= 0`` from (1, 0)."""

    def b_second(x):
        H = _zeros3(x)
        H[..., 1, 0, 0] = 2.0
        return H

    sigma = VectorField2(
        value=lambda x: _vec(1.0 + 0 * x[..., 0], 0.0),
        jacobian=lambda x: _mat(0.0 * x[..., 0], 0.0, 0.0, 0.0),
        second=_zeros3,
    )
    b = VectorField2(
        value=lambda x: _vec(0.0 * x[..., 0], x[..., 0] ** 2),
        jacobian=lambda x: _mat(0.0 * x[..., 0], 0.0, 2.0 * x[..., 0], 0.0),
        second=b_second,
    )
    return DiffusionModel(
        name="counterexample",
        sigma=sigma,
        b=b,
        domain=_WIDE,
        n_bound=lambda x: (np.abs(x[..., 0]) + 1.0) ** 2 + 2.0,
        lambda_bound=lambda x: np.minimum(1.0, 4.0 * x[..., 0] ** 2),
        kappa_sigma=lambda x: 0.0,
        kappa_cubic=lambda x: 0.0,
        notes="density vanishes on {y2 <= 0} when started at (1, 0)",
    )


def kolmogorov() -> DiffusionModel:
    """``sigma = (1, 0)``, ``b = (0, x1)``: constant frame ``A = I``."""
    sigma = counterexample().sigma
    b = VectorField2(
        value=lambda x: _vec(0.0 * x[..., 0], x[..., 0]),
        jacobian=lambda x: _mat(0.0 * x[..., 0], 0.0, 1.0, 0.0),
        second=_zeros3,
        third=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2)),
    )
    return DiffusionModel(
        name="kolmogorov",
        sigma=VectorField2(sigma.value, sigma.jacobian, sigma.second),
        b=b,
        domain=_WIDE,
        n_bound=lambda x: np.abs(x[..., 0]) + 3.0,
        lambda_bound=lambda x: np.ones(np.shape(x)[:-1]),
        kappa_sigma=lambda x: 0.0,
        kappa_cubic=lambda x: 0.0,
        notes="A(x) = I everywhere",
    )


def constant_model(sigma=(1.0, 0.0), b=(0.0, 1.0), name="constant") -> DiffusionModel:
    """Constant coefficients (bracket zero, so A is singular; useful for checks)."""
    s = np.asarray(sigma, dtype=float)
    bb = np.asarray(b, dtype=float)

    def const(v):
        return VectorField2(
            value=lambda x: np.broadcast_to(v, np.shape(x)).copy(),
            jacobian=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2)),
            second=_zeros3,
        )

    return DiffusionModel(
        name=name,
        sigma=const(s),
        b=const(bb),
        domain=_WIDE,
        n_bound=lambda x: np.full(np.shape(x)[:-1], max(1.0, np.abs(s).sum() + np.abs(bb).sum())),
        lambda_bound=lambda x: np.ones(np.shape(x)[:-1]),
        kappa_sigma=lambda x: 0.0,
        kappa_cubic=lambda x: 0.0,
    )


# --------------------------------------------------------- polynomial models


class PolynomialField(VectorField2):
    """Vector field whose components are bivariate polynomials.

    ``tables`` holds one dict per component mapping exponent pairs
    ``(i, j)`` to the coefficient of ``x1**i * x2**j``.
    """

    def __init__(self, tables, domain: Optional[Box] = None):
        if len(tables) != 2:
            raise ConfigError("a planar field needs exactly two component tables")
        deg = max([i for t in tables for (i, j) in t] + [j for t in tables for (i, j) in t] + [0])
        coefs = np.zeros((2, deg + 4, deg + 4))
        for c, table in enumerate(tables):
            for (i, j), v in table.items():
                if i < 0 or j < 0:
                    raise ConfigError("polynomial exponents must be non-negative")
                coefs[c, i, j] += float(v)
        # derivative coefficient arrays keyed by the multi-index of x-derivatives
        der = {(): coefs}
        for order in range(1, 4):
            for idx in np.ndindex(*(2,) * order):
                der[idx] = np.stack([P.polyder(der[idx[:-1]][c], axis=idx[-1]) for c in range(2)])
        object.__setattr__(self, "tables", [dict(t) for t in tables])
        object.__setattr__(self, "_der", der)
        object.__setattr__(self, "value", self._value)
        object.__setattr__(self, "jacobian", self._jacobian)
        object.__setattr__(self, "second", self._second)
        object.__setattr__(self, "third", self._third)
        object.__setattr__(self, "domain", domain)

    def _eval(self, C, x):
        x = np.asarray(x, dtype=float)
        return np.stack([P.polyval2d(x[..., 0], x[..., 1], C[c]) for c in range(2)], axis=-1)

    def _value(self, x):
        return self._eval(self._der[()], x)

    def _tensor(self, x, order):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2,) * (order + 1))
        for idx in np.ndindex(*(2,) * order):
            out[(Ellipsis, slice(None)) + idx] = self._eval(self._der[idx], x)
        return out

    def _jacobian(self, x):
        return self._tensor(x, 1)

    def _second(self, x):
        return self._tensor(x, 2)

    def _third(self, x):
        return self._tensor(x, 3)

    def with_domain(self, domain: Box) -> "PolynomialField":
        return PolynomialField(self.tables, domain)

    def derivative_norm_sum(self, x):
        """``sum_{k<=3} sum_{|alpha|=k} |d^alpha f(x)|`` over unordered multi-indices."""
        x = np.asarray(x, dtype=float)
        total = np.linalg.norm(self._value(x), axis=-1)
        for order in range(1, 4):
            for k in range(order + 1):
                idx = (0,) * (order - k) + (1,) * k
                total = total + np.linalg.norm(self._eval(self._der[idx], x), axis=-1)
        return total


def polynomial_model(sigma_tables, b_tables, domain=None, name="custom", kappa_tol=1e-8) -> DiffusionModel:
    """Build a model from polynomial coefficient tables.

    ``n(x)`` is the exact derivative sum of both fields (floored at 1).  The
    model is flagged H3-compliant when collinearity holds on a 16x16 grid of
    the domain.
    """
    domain = domain or Box((-10.0, -10.0), (10.0, 10.0))
    sigma = PolynomialField(sigma_tables)
    b = PolynomialField(b_tables)

    def n_bound(x):
        return np.maximum(1.0, sigma.derivative_norm_sum(x) + b.derivative_norm_sum(x))

    model = DiffusionModel(name=name, sigma=sigma, b=b, domain=domain, n_bound=n_bound, h3=False)
    g = np.stack(
        np.meshgrid(*[np.linspace(domain.lo[i], domain.hi[i], 16) for i in range(2)]), -1
    ).reshape(-1, 2)
    s = np.linalg.norm(model.sigma(g), axis=-1)
    try:
        check_H3(model, g[s > 0], tol=kappa_tol)
        h3 = bool(np.any(s > 0))
    except H3Violated:
        h3 = False
    object.__setattr__(model, "h3", h3)
    return model


BUILTIN_MODELS = {
    "asian": asian,
    "counterexample": counterexample,
    "asian-drift": asian_drift,
    "kolmogorov": kolmogorov,
}


def get_model(name: str, **params) -> DiffusionModel:
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    return factory(**params)
