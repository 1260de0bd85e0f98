"""Short-time stochastic Taylor development around the Euler point.

With ``x_hat = x + delta b(x)`` the end point of the diffusion splits as

    X_delta = x_hat + Abar_delta(x) (G + Rt),

where ``G = Theta + Abar_delta^{-1} eta(delta^{1/2} Theta_1)`` is the
principal part built from the Gaussian pair
``Theta = (delta^{-1/2} W_delta, delta^{-3/2} int_0^delta (delta - s) dW_s)``
and ``Rt`` is the remainder, obtained here by subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, H3Violated
from .model import DiffusionModel, as_point
from .norms import NormFrame, frame_bar
from .rng import DEFAULT_BLOCK, map_blocks
from .skeleton import Control, solve_skeleton

__all__ = [
    "Q",
    "BrownianSegment",
    "TaylorDecomposition",
    "theta_from_segment",
    "theta_samples",
    "eta",
    "principal_part",
    "decompose",
    "decompose_control",
    "ControlDecomposition",
]

# covariance of Theta
Q = np.array([[1.0, 0.5], [0.5, 1.0 / 3.0]])


@dataclass(frozen=True)
class BrownianSegment:
    """Increments of ``W`` on ``[0, delta]``; may be batched as ``(n_paths, n_steps)``."""

    dt: float
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if self.dt <= 0 or inc.shape[-1] < 1:
            raise ConfigError("a Brownian segment needs dt > 0 and at least one increment")
        object.__setattr__(self, "increments", inc)
        if self.delta > 1 + 1e-12:
            raise ConfigError(f"segment length {self.delta:g} exceeds 1")

    @property
    def delta(self) -> float:
        return self.dt * self.increments.shape[-1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-1]


def _theta_weights(dt, m):
    delta = dt * m
    s = dt * np.arange(m)  # left end points
    return np.full(m, delta**-0.5), (delta - s) * delta**-1.5


def theta_from_segment(seg: BrownianSegment) -> np.ndarray:
    """``(theta_1, theta_2)`` with left-point Riemann sums; shape ``(..., 2)``."""
    w1, w2 = _theta_weights(seg.dt, seg.n_steps)
    return np.stack([seg.increments @ w1, seg.increments @ w2], axis=-1)


def theta_samples(
    n: int,
    delta: float,
    dt: float,
    seed: int,
    block_size: int = DEFAULT_BLOCK,
    threads: Optional[int] = None,
) -> np.ndarray:
    """``n`` independent draws of ``Theta`` from simulated increments."""
    m = int(round(delta / dt))
    if m < 1 or abs(m * dt - delta) > 1e-9 * delta:
        raise ConfigError("delta must be an integer multiple of dt")

    def block(gen, start, count):
        inc = gen.standard_normal((count, m)) * np.sqrt(dt)
        return theta_from_segment(BrownianSegment(dt, inc))

    return np.concatenate(map_blocks(block, n, seed, block_size, threads))


def eta(model: DiffusionModel, x, u) -> np.ndarray:
    """``(kappa/2 u^2 + (d_sigma kappa + kappa^2)/6 u^3) sigma(x)``, batched over ``u``."""
    if not model.h3:
        raise H3Violated([as_point(x)], f"model {model.name!r} is not flagged H3-compliant")
    x = as_point(x)
    u = np.asarray(u, dtype=float)
    k1 = float(model.kappa(x))
    k3 = float(model.kappa3(x))
    coef = k1 / 2 * u**2 + k3 / 6 * u**3
    return coef[..., None] * model.sigma(x)


def principal_part(model: DiffusionModel, x, delta: float, theta, fr: Optional[NormFrame] = None):
    """``G = theta + Abar_delta^{-1} eta(delta^{1/2} theta_1)``."""
    fr = fr or frame_bar(model, x, delta)
    theta = np.asarray(theta, dtype=float)
    e = eta(model, x, np.sqrt(delta) * theta[..., 0])
    return theta + e @ fr.inverse.T


@dataclass(frozen=True)
class TaylorDecomposition:
    x_hat: np.ndarray
    frame: NormFrame
    theta: np.ndarray
    G: np.ndarray
    remainder: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """``x_hat + Abar_delta (G + Rt)``."""
        return self.x_hat + (self.G + self.remainder) @ self.frame.matrix.T


def decompose(model: DiffusionModel, x, delta: float, seg: BrownianSegment, X_delta) -> TaylorDecomposition:
    """Split simulated end points ``X_delta`` (driven by ``seg``) into ``G`` and ``Rt``."""
    x = as_point(x)
    if abs(seg.delta - delta) > 1e-9 * delta:
        raise ConfigError(f"segment length {seg.delta:g} differs from delta {delta:g}")
    fr = frame_bar(model, x, delta)
    x_hat = x + delta * model.b(x)
    theta = theta_from_segment(seg)
    G = principal_part(model, x, delta, theta, fr)
    F = (np.asarray(X_delta, dtype=float) - x_hat) @ fr.inverse.T
    return TaylorDecomposition(x_hat=x_hat, frame=fr, theta=theta, G=G, remainder=F - G)


@dataclass(frozen=True)
class ControlDecomposition:
    theta: np.ndarray
    G: np.ndarray
    remainder: np.ndarray
    end_point: np.ndarray
    frame: NormFrame


def decompose_control(model: DiffusionModel, x, delta: float, phi: Control, steps_per_knot: int = 8):
    """Deterministic analogue with ``Theta_phi`` from exact quadrature of ``phi``."""
    x = as_point(x)
    fr = frame_bar(model, x, delta)
    a, b = phi.integrals(delta)
    theta = np.array([a * delta**-0.5, b * delta**-1.5])
    G = principal_part(model, x, delta, theta, fr)
    end = solve_skeleton(model, x, phi.restrict(delta), steps_per_knot).points[-1]
    x_hat = x + delta * model.b(x)
    R = fr.inverse @ (end - x_hat) - G
    return ControlDecomposition(theta=theta, G=G, remainder=R, end_point=end, frame=fr)
