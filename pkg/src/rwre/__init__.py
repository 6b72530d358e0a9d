"""Random walks in random environments: simulation, exact quenched solves,
renewal estimators, ballisticity diagnostics and empirical rate functions."""

__version__ = "0.1.0"

from .env_model import (AnisotropicProduct, BalancedIID, DirichletIID, DiscreteLaw,  # noqa: E402
                        Environment, EnvironmentLaw, Homogeneous, TrapLaw)
from .errors import (ConfigError, ContractError, DomainError, InsufficientDataError,  # noqa: E402
                     NumericalError, ResourceError, RwreError)
from .stats import EstimateWithCI  # noqa: E402

__all__ = [
    "AnisotropicProduct", "BalancedIID", "DirichletIID", "DiscreteLaw", "Environment",
    "EnvironmentLaw", "Homogeneous", "TrapLaw", "ConfigError", "ContractError", "DomainError",
    "InsufficientDataError", "NumericalError", "ResourceError", "RwreError", "EstimateWithCI",
]
