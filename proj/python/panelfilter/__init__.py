"""Panel particle filtering and iterated filtering."""

from ._core import (
    CapabilityError,
    ConfigError,
    DomainError,
    Error,
    eulermultinom,
    gaussian_cloning,
    gompertz_exact_loglik,
    gompertz_panel_loglik,
    kalman_loglik,
    run,
    simulate_gompertz,
    systematic_resample,
    version,
)

__version__ = version()

__all__ = [
    "CapabilityError",
    "ConfigError",
    "DomainError",
    "Error",
    "eulermultinom",
    "gaussian_cloning",
    "gompertz_exact_loglik",
    "gompertz_panel_loglik",
    "kalman_loglik",
    "run",
    "simulate_gompertz",
    "systematic_resample",
    "version",
]
