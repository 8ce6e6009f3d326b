"""Autonomous thermal clock: a two-qubit heat engine pushing a ladder upwards.

The ladder's top level emits a photon (a tick) and resets. Submodules:

``model``
    Parameters, engine rates, virtual-qubit quantities and closed forms.
``quantum``
    Conditional (no-click) evolution of the full pointer and tick moments.
``chain``
    Classical birth-death reduction of the ladder.
``sweep``
    Parameter grids, backends and contour extraction.
``io``, ``cli``
    Configuration, CSV serialization and the command-line entry point.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ClockError,
    ConfigError,
    InvalidParameters,
    LevelNotBracketed,
    NonDecaying,
    NonOperational,
    ReabsorptionWarning,
    SingularGenerator,
    StepFailure,
    TailDominated,
    ValidityWarning,
    WeakCouplingWarning,
)
from .model import (  # noqa: E402
    ClockParams,
    TickStatistics,
    VirtualQubitDescriptor,
    accuracy_vs_heat,
    analytic_accuracy,
    analytic_resolution,
    engine_rates,
    min_power_estimate,
    virtual_qubit,
)

__all__ = [
    "__version__",
    "ClockError",
    "ConfigError",
    "InvalidParameters",
    "LevelNotBracketed",
    "NonDecaying",
    "NonOperational",
    "ReabsorptionWarning",
    "SingularGenerator",
    "StepFailure",
    "TailDominated",
    "ValidityWarning",
    "WeakCouplingWarning",
    "ClockParams",
    "TickStatistics",
    "VirtualQubitDescriptor",
    "accuracy_vs_heat",
    "analytic_accuracy",
    "analytic_resolution",
    "engine_rates",
    "min_power_estimate",
    "virtual_qubit",
]
