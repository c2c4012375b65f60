"""GFlowNet training with learned energy decomposition, on a small numpy autodiff core."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError, ContractError, EnumerationTooLarge, EnvironmentContractError, IntegrityError,
    LedGfnError, RuntimeAbort,
)
from .gfn import ObjectiveKind, PolicyModel  # noqa: E402
from .led import DecompositionConfig, PotentialModel, Redistribution  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "ContractError", "EnumerationTooLarge", "EnvironmentContractError",
    "IntegrityError", "LedGfnError", "RuntimeAbort", "ObjectiveKind", "PolicyModel",
    "DecompositionConfig", "PotentialModel", "Redistribution",
]
