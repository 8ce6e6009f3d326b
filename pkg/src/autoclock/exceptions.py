"""Exception and warning types raised across the package."""


class ClockError(Exception):
    """Base class for all clock computation failures."""


class NonOperational(ClockError):
    """The parameters do not produce an upward-drifting, ticking clock."""


class StepFailure(ClockError):
    """The adaptive integrator could not meet its error tolerance."""


class NonDecaying(ClockError):
    """The survival probability did not decay within the horizon."""


class TailDominated(ClockError):
    """Too much probability mass lies beyond the integration horizon."""


class SingularGenerator(ClockError):
    """The no-click generator could not be inverted for the moment solves."""


class LevelNotBracketed(ClockError):
    """A requested contour level never crosses the sweep grid."""


class InvalidParameters(ValueError):
    """A parameter set violates one of its invariants."""


class ConfigError(ValueError):
    """Malformed or unknown configuration input.

    Parameters
    ----------
    message : str
    key : str, optional
        Offending configuration key.
    line : int, optional
        1-based line number in the configuration file, if any.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidityWarning(UserWarning):
    """Base class for model-validity warnings."""


class WeakCouplingWarning(ValidityWarning):
    """Engine transition rates are not small compared to the thermal rates."""


class ReabsorptionWarning(ValidityWarning):
    """Bath temperature is not small against the photon energy."""
