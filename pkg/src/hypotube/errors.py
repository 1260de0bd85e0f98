"""Exception hierarchy shared by all hypotube modules."""


class HypotubeError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(HypotubeError, ValueError):
    """Invalid experiment or function parameters."""


class DomainError(HypotubeError, ValueError):
    """A point lies outside the model's declared domain of validity."""


class DomainExit(HypotubeError):
    """A deterministic trajectory left the model domain at time ``t``."""

    def __init__(self, t, point=None):
        self.t = t
        self.point = point
        super().__init__(f"trajectory left the model domain at t={t:.6g}")


class H3Violated(HypotubeError):
    """The volatility field is not self-collinear (d_sigma sigma not parallel to sigma)."""

    def __init__(self, points, message=None):
        self.points = [tuple(map(float, p)) for p in points]
        super().__init__(message or f"H3 fails at {len(self.points)} point(s): {self.points[:5]}")


class SingularSigma(HypotubeError):
    """sigma(x) vanishes, so collinearity cannot be tested."""


class SingularFrame(HypotubeError):
    """The anisotropic frame matrix is (numerically) singular."""


class StepFailure(HypotubeError):
    """Step halving of the ODE integrator did not converge."""


class RangeError(HypotubeError, ValueError):
    """A time window falls outside the control horizon."""


class GridTooCoarse(HypotubeError, ValueError):
    """Samples are too sparse to resolve the growth window."""


class DegenerateRate(HypotubeError):
    """The grid rate integrates to zero, so no unit-mass interval exists."""


class ValidityError(HypotubeError):
    """A bound was requested outside the regime where it is proven."""

    def __init__(self, R, R_star):
        self.R = R
        self.R_star = R_star
        super().__init__(f"R={R:.6g} exceeds the validity threshold R_*={R_star:.6g}")


class InsufficientSamples(HypotubeError, ValueError):
    """Too few Monte Carlo samples for the requested estimator."""


class Unreachable(HypotubeError):
    """No control found that steers the system to the target point."""


class NewtonFailure(HypotubeError):
    """Newton iteration on the endpoint map failed to converge."""
