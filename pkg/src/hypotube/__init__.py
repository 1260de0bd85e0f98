"""Short-time Gaussian density and tube estimates for planar diffusions
driven by one Brownian motion under a local weak Hormander condition."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    DomainExit,
    HypotubeError,
    SingularFrame,
    ValidityError,
)
from .model import DiffusionModel, get_model, BUILTIN_MODELS  # noqa: E402

__all__ = [
    "__version__",
    "ConfigError",
    "DomainError",
    "DomainExit",
    "HypotubeError",
    "SingularFrame",
    "ValidityError",
    "DiffusionModel",
    "get_model",
    "BUILTIN_MODELS",
]
