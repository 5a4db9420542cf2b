"""Storage expansion planning for microgrids under uncertain grid outages.

The package derives multi-period storage installation policies with
tabular Q-learning on a finite-horizon MDP whose outage costs come from a
Monte Carlo islanding simulation, and quantifies how the choice of outage
model (single Poisson vs. superposed regular/severe Poisson) changes the
optimal policy.
"""

__version__ = "0.1.0"

from outageplan.errors import ArtifactMismatchError, ConfigError, FitError, OutagePlanError

__all__ = [
    "__version__",
    "OutagePlanError",
    "ConfigError",
    "FitError",
    "ArtifactMismatchError",
]
