"""Anisotropic frames ``A_R(x)`` and the norms they induce.

The frame at ``x`` with scale ``R`` has columns ``R^{1/2} sigma(x)`` and
``R^{3/2} [b, sigma](x)``; its norm is ``|xi|_{A_R(x)} = |A_R(x)^{-1} xi|``.
Diffusive noise moves along ``sigma`` at speed ``R^{1/2}`` while the
drift-propagated direction only moves at ``R^{3/2}``, which is what the two
scalings encode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigError, SingularFrame

log = logging.getLogger(__name__)

__all__ = [
    "NormFrame",
    "frame",
    "frame_bar",
    "frame_matrix",
    "inverse2",
    "norm",
    "eig_bounds",
    "quasi_distance",
    "QuasiDistance",
    "bump",
    "LemmaResult",
    "lemma_suite",
    "LEMMA_SAMPLING",
]

_SINGULAR_RTOL = 1e-14
_WARN_RTOL = 1e-10


def inverse2(M, reference=None):
    """Closed-form inverse of (a batch of) 2x2 matrices via the adjugate.

    Singularity is judged against ``reference`` (defaults to ``M``):
    ``|det M| < 1e-14 |M_ref|^2`` scaled by the same column factors.
    """
    M = np.asarray(M, dtype=float)
    a, b = M[..., 0, 0], M[..., 0, 1]
    c, d = M[..., 1, 0], M[..., 1, 1]
    det = a * d - b * c
    ref = M if reference is None else np.asarray(reference, dtype=float)
    scale = np.sum(ref * ref, axis=(-2, -1))
    if np.any(np.abs(det) < _SINGULAR_RTOL * scale) or np.any(det == 0):
        raise SingularFrame(f"singular frame: |det| = {np.min(np.abs(det)):.3e}")
    if np.any(np.abs(det) < _WARN_RTOL * scale):
        log.warning("ill-conditioned frame: |det| = %.3e", float(np.min(np.abs(det))))
    adj = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
    return adj / det[..., None, None]


@dataclass(frozen=True)
class NormFrame:
    base_point: np.ndarray
    scale_R: float
    matrix: np.ndarray
    inverse: np.ndarray

    def __call__(self, xi):
        return norm(self, xi)


def _check_scale(R, name="R"):
    if not (0 < R <= 1):
        raise ConfigError(f"{name} must lie in (0, 1], got {R!r}")


def frame_matrix(model, x, R, bar=False):
    """Unchecked frame matrix ``A_R(x)`` (or ``A-bar_R(x)``), batched over ``x``.

    Returns the scaled matrix and the unscaled one used for the singularity test.
    """
    x = np.asarray(x, dtype=float)
    R = np.asarray(R, dtype=float)
    s = model.sigma(x)
    if bar:
        s = s + R[..., None] * model.d_b_sigma(x)
    A = np.stack([s, model.bracket(x)], axis=-1)
    scaled = A * np.stack([np.sqrt(R), R**1.5], -1)[..., None, :]
    return scaled, A


def _make(model, x, R, bar):
    x = np.asarray(x, dtype=float)
    model.require(x)
    scaled, A = frame_matrix(model, x, R, bar=bar)
    # test singularity on the unscaled columns, then rescale the inverse
    invA = inverse2(A)
    inv = invA / np.array([np.sqrt(R), R**1.5])[:, None]
    return NormFrame(base_point=x, scale_R=float(R), matrix=scaled, inverse=inv)


def frame(model, x, R: float) -> NormFrame:
    """``A_R(x) = (R^{1/2} sigma(x), R^{3/2} [b, sigma](x))``."""
    _check_scale(R)
    return _make(model, x, R, bar=False)


def frame_bar(model, x, delta: float) -> NormFrame:
    """``A-bar_delta(x)``: first column ``delta^{1/2}(sigma + delta d_b sigma)``."""
    _check_scale(delta, "delta")
    return _make(model, x, delta, bar=True)


def norm(fr: NormFrame, xi) -> np.ndarray:
    """``|fr.inverse @ xi|`` for one vector or a batch ``(..., 2)``."""
    xi = np.asarray(xi, dtype=float)
    return np.linalg.norm(np.einsum("...ij,...j->...i", fr.inverse, xi), axis=-1)


def eig_bounds(M):
    """Smallest and largest eigenvalue of ``M M^T`` (closed form, batched)."""
    M = np.asarray(M, dtype=float)
    S = M @ np.swapaxes(M, -1, -2)
    tr = S[..., 0, 0] + S[..., 1, 1]
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    hi = tr / 2 + disc
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = np.where(hi > 0, np.maximum(det, 0.0) / hi, 0.0)
    return lo, hi


class QuasiDistance(NamedTuple):
    value: float
    saturated: bool


def quasi_distance(model, x, y, tol: float = 1e-10) -> QuasiDistance:
    """``d(x, y) = sqrt(R*)`` where ``|y - x|_{A_{R*}(x)} = 1``.

    ``R -> |y - x|_{A_R(x)}`` is strictly decreasing, so ``R*`` is bracketed in
    ``[1e-12, 1]`` and found by bisection in ``log R``.  If even ``R = 1``
    leaves the norm above one the result saturates at ``1``.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(y, dtype=float) - x
    if not np.any(xi):
        return QuasiDistance(0.0, False)
    fr = frame(model, x, 1.0)
    v = fr.inverse @ xi  # A(x)^{-1} xi

    def excess(logR):
        R = np.exp(logR)
        return np.hypot(v[0] / np.sqrt(R), v[1] / R**1.5) - 1.0

    if excess(0.0) > 0:
        return QuasiDistance(1.0, True)
    lo = np.log(1e-12)
    if excess(lo) <= 0:
        return QuasiDistance(float(np.sqrt(1e-12)), False)
    logR = bisect(excess, lo, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(excess(logR)) > tol:
        log.warning("quasi_distance bisection residual %.3e above tol", abs(excess(logR)))
    return QuasiDistance(float(np.exp(logR / 2)), False)


def bump(a: float, x):
    """Smooth plateau ``psi_a``: 1 on ``|x| <= a``, 0 beyond ``2a``.

    In between it is ``exp(1 - a^2 / (a^2 - (|x| - a)^2))``.
    """
    if a <= 0:
        raise ConfigError("a must be positive")
    x = np.abs(np.asarray(x, dtype=float))
    u = x - a
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        mid = np.exp(1.0 - a * a / (a * a - u * u))
    out = np.where(x <= a, 1.0, np.where(x < 2 * a, mid, 0.0))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- lemma suites

# per-model sampling boxes and (delta*, rho) used by the base-point lemma
LEMMA_SAMPLING = {
    "asian": dict(box=((0.5, -1.0), (2.0, 1.0)), delta_star=0.1, rho=0.5),
    "asian-drift": dict(box=((0.5, -1.0), (2.0, 1.0)), delta_star=0.1, rho=0.5),
    "counterexample": dict(box=((0.5, -1.0), (2.0, 1.0)), delta_star=0.1, rho=0.5),
}


@dataclass
class LemmaResult:
    name: str
    cases: int
    violations: int
    constant: float  # empirical constant (worst ratio) where meaningful

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _random_setup(model, rng, n):
    cfg = LEMMA_SAMPLING.get(model.name, LEMMA_SAMPLING["asian"])
    lo, hi = map(np.asarray, cfg["box"])
    x = lo + (hi - lo) * rng.random((n, 2))
    ang = 2 * np.pi * rng.random(n)
    mag = 10.0 ** rng.uniform(-4, 1, n)
    xi = mag[:, None] * np.stack([np.cos(ang), np.sin(ang)], -1)
    return cfg, x, xi


def _batch_norm(model, x, R, xi, bar=False):
    scaled, A = frame_matrix(model, x, R, bar=bar)
    inv = inverse2(A) / np.stack([np.sqrt(R), R**1.5], -1)[..., :, None]
    return np.linalg.norm(np.einsum("...ij,...j->...i", inv, xi), axis=-1)


def lemma_suite(model, n_cases: int = 10_000, seed: int = 0, frame_C: float = 8.0):
    """Randomized checks of the matrix-norm inequalities on one model.

    Returns one :class:`LemmaResult` per property: the scaling sandwich in
    ``R``, comparison with the Euclidean norm, equivalence of the ``A``,
    ``A-bar`` and shifted-base frames (factor ``frame_C``), and the
    factor-4 base-point stability.
    """
    rng = np.random.default_rng(seed)
    eps = 1e-12
    out = []

    cfg, x, xi = _random_setup(model, rng, n_cases)
    R = rng.uniform(1e-3, 1.0, n_cases)
    Rp = R + (1.0 - R) * rng.random(n_cases)
    nR = _batch_norm(model, x, R, xi)
    nRp = _batch_norm(model, x, Rp, xi)
    r = R / Rp
    bad = (nRp < r**1.5 * nR * (1 - eps)) | (nRp > r**0.5 * nR * (1 + eps))
    out.append(LemmaResult("scaling_sandwich", n_cases, int(bad.sum()), float(np.max(nRp / nR))))

    lo, hi = eig_bounds(model.A(x))
    e = np.linalg.norm(xi, axis=-1)
    lower = e / (np.sqrt(R) * np.sqrt(hi))
    upper = e / (R**1.5 * np.sqrt(lo))
    bad = (nR < lower * (1 - eps)) | (nR > upper * (1 + eps))
    out.append(LemmaResult("euclidean_comparison", n_cases, int(bad.sum()), float(np.max(nR / upper))))

    cfg, x, xi = _random_setup(model, rng, n_cases)
    delta = 10.0 ** rng.uniform(-4, -1, n_cases)
    base = _batch_norm(model, x, delta, xi)
    nbar = _batch_norm(model, x, delta, xi, bar=True)
    xhat = x + delta[:, None] * model.b(x)
    nhat = _batch_norm(model, xhat, delta, xi)
    ratios = np.concatenate([nbar / base, base / nbar, nhat / base, base / nhat])
    C = float(np.max(ratios))
    out.append(LemmaResult("frame_comparison", n_cases, int(np.sum(ratios > frame_C)), C))

    cfg, x, xi = _random_setup(model, rng, n_cases)
    delta = cfg["delta_star"] * 10.0 ** rng.uniform(-3, 0, n_cases)
    ang = 2 * np.pi * rng.random(n_cases)
    rad = cfg["rho"] * np.sqrt(rng.random(n_cases))
    u = rad[:, None] * np.stack([np.cos(ang), np.sin(ang)], -1)
    scaled, _ = frame_matrix(model, x, delta)
    y = x + np.einsum("...ij,...j->...i", scaled, u)
    nx = _batch_norm(model, x, delta, xi)
    ny = _batch_norm(model, y, delta, xi)
    q = ny / nx
    bad = (q < 0.25) | (q > 4.0)
    out.append(LemmaResult("base_point", n_cases, int(bad.sum()), float(max(q.max(), 1 / q.min()))))
    return out
