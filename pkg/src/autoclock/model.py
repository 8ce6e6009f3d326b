"""Physical parameters of the thermal clock and its closed-form quantities.

Units: hbar = k_B = 1 and the ladder spacing ``E_w`` is the energy unit, so
times are measured in units of ``1/E_w``. Only :func:`min_power_estimate`
works in SI units.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields

from .exceptions import (
    InvalidParameters,
    NonOperational,
    ReabsorptionWarning,
    WeakCouplingWarning,
)

K_B = 1.380649e-23  # J/K

# p_up, p_down must stay below this fraction of the slowest qubit relaxation rate
WEAK_COUPLING_FRACTION = 0.1
# T_c at or above this fraction of the photon energy makes reabsorption relevant
REABSORPTION_FRACTION = 0.2

WEAK_COUPLING_FLAG = "weak_coupling"
REABSORPTION_FLAG = "reabsorption"


@dataclass(frozen=True)
class ClockParams:
    """Parameter set of the two-qubit engine driving a ``d``-level ladder.

    The hot-qubit gap is not a free parameter: ``E_h = E_c + E_w`` so that
    ``|0_c 1_h k>`` and ``|1_c 0_h k+1>`` are degenerate.

    Parameters
    ----------
    E_c : float
        Cold-qubit energy gap.
    d : int
        Number of ladder levels.
    g : float
        Engine-ladder coupling.
    gamma_h, gamma_c : float
        Thermalization rates of the hot and cold qubits.
    Gamma : float
        Spontaneous emission rate of the top ladder level.
    T_c, T_h : float
        Bath temperatures. ``T_h`` may be ``inf``.
    E_w : float
        Ladder spacing, 1 by convention.
    """

    E_c: float = 1.0
    d: int = 10
    g: float = 0.05
    gamma_h: float = 0.05
    gamma_c: float = 0.05
    Gamma: float = 0.05
    T_c: float = 1.0
    T_h: float = 1000.0
    E_w: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "d", _as_int(self.d))
        checks = [
            (self.E_c > 0, "E_c > 0"),
            (self.E_w > 0, "E_w > 0"),
            (self.d >= 2, "d >= 2"),
            (self.gamma_h > 0, "gamma_h > 0"),
            (self.gamma_c > 0, "gamma_c > 0"),
            (self.Gamma >= 0, "Gamma >= 0"),
            (self.g >= 0, "g >= 0"),
            (self.T_c > 0, "T_c > 0"),
            (self.T_h > self.T_c, "T_h > T_c"),
        ]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and math.isnan(value):
                raise InvalidParameters(f"{f.name} is NaN")
        for ok, name in checks:
            if not ok:
                raise InvalidParameters(f"invariant violated: {name} ({self!r})")

    @property
    def E_h(self) -> float:
        return self.E_c + self.E_w

    @property
    def E_gamma(self) -> float:
        return (self.d - 1) * self.E_w

    @property
    def beta_c(self) -> float:
        return 1.0 / self.T_c

    @property
    def beta_h(self) -> float:
        return 0.0 if math.isinf(self.T_h) else 1.0 / self.T_h

    @property
    def Z_h(self) -> float:
        """Partition function of the hot qubit."""
        return 1.0 + math.exp(-self.beta_h * self.E_h)

    @property
    def Z_c(self) -> float:
        """Partition function of the cold qubit."""
        return 1.0 + math.exp(-self.beta_c * self.E_c)

    def replace(self, **changes) -> "ClockParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ClockParams(**values)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_int(d):
    if isinstance(d, bool):
        raise InvalidParameters("d must be an integer")
    if isinstance(d, int):
        return d
    if isinstance(d, float) and d.is_integer():
        return int(d)
    try:
        import numpy as np

        if isinstance(d, np.integer):
            return int(d)
    except ImportError:  # pragma: no cover
        pass
    raise InvalidParameters(f"d must be an integer, got {d!r}")


@dataclass(frozen=True)
class VirtualQubitDescriptor:
    """Derived engine quantities: virtual temperature, bias, rates and heats.

    ``beta_v`` is stored rather than ``T_v`` because ``T_v`` diverges at
    ``beta_v = 0``.
    """

    beta_v: float
    Z_v: float
    p_up: float
    p_down: float
    Q_c: float
    Q_h: float
    delta_S_tick: float

    @property
    def T_v(self) -> float:
        if self.beta_v == 0.0:
            return math.inf
        return 1.0 / self.beta_v


@dataclass(frozen=True)
class TickStatistics:
    """Waiting-time statistics of a renewal clock.

    Parameters
    ----------
    t_tick : float
        Mean waiting time between ticks.
    dt_tick : float
        Standard deviation of the waiting time.
    """

    t_tick: float
    dt_tick: float

    def __post_init__(self):
        for name in ("t_tick", "dt_tick"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    @classmethod
    def from_moments(cls, mean: float, second_moment: float) -> "TickStatistics":
        var = second_moment - mean * mean
        if not var > 0:
            raise ValueError(f"non-positive waiting-time variance {var}")
        return cls(float(mean), math.sqrt(var))

    @property
    def nu_tick(self) -> float:
        return 1.0 / self.t_tick

    @property
    def N(self) -> float:
        return (self.t_tick / self.dt_tick) ** 2

    @property
    def variance(self) -> float:
        return self.dt_tick**2


def virtual_temperature(params: ClockParams) -> float:
    """Inverse virtual temperature ``beta_v`` of the engine's virtual qubit.

    Negative values mean population inversion, the regime in which the
    ladder is pushed upwards.
    """
    p = params
    return (p.beta_h * p.E_h - p.beta_c * p.E_c) / p.E_w


def virtual_bias(params: ClockParams) -> float:
    """Population bias ``Z_v = tanh(beta_v E_w / 2)`` of the virtual qubit."""
    return math.tanh(virtual_temperature(params) * params.E_w / 2.0)


def heats(params: ClockParams) -> tuple[float, float, float]:
    """Heat per tick ``(Q_c, Q_h, E_gamma)``.

    ``Q_c`` is dissipated into the cold bath, ``Q_h`` drawn from the hot
    bath and ``E_gamma`` carried off by the emitted photon.
    """
    steps = params.d - 1
    return steps * params.E_c, steps * params.E_h, steps * params.E_w


def entropy_per_tick(params: ClockParams) -> float:
    Q_c, Q_h, _ = heats(params)
    return params.beta_c * Q_c - params.beta_h * Q_h


def validity_flags(params: ClockParams) -> tuple[str, ...]:
    """Names of the model-validity conditions that ``params`` violates."""
    flags = []
    p_up, p_down = _rates(params)
    limit = WEAK_COUPLING_FRACTION * min(
        params.gamma_h * params.Z_h, params.gamma_c * params.Z_c
    )
    if max(p_up, p_down) >= limit:
        flags.append(WEAK_COUPLING_FLAG)
    if params.T_c >= REABSORPTION_FRACTION * params.E_gamma:
        flags.append(REABSORPTION_FLAG)
    return tuple(flags)


def warn_validity(params: ClockParams, only=None, stacklevel: int = 3) -> tuple[str, ...]:
    """Emit a warning for each violated validity condition and return the flags."""
    flags = validity_flags(params)
    if WEAK_COUPLING_FLAG in flags and only in (None, WEAK_COUPLING_FLAG):
        warnings.warn(
            "engine rates are not small compared to the qubit thermalization "
            "rates; the random-walk reduction is unreliable",
            WeakCouplingWarning,
            stacklevel=stacklevel,
        )
    if REABSORPTION_FLAG in flags and only in (None, REABSORPTION_FLAG):
        warnings.warn(
            f"T_c = {params.T_c} is not small against the photon energy "
            f"{params.E_gamma}; neglected reabsorption may matter",
            ReabsorptionWarning,
            stacklevel=stacklevel,
        )
    return flags


def _rates(params: ClockParams) -> tuple[float, float]:
    p = params
    Z_h, Z_c = p.Z_h, p.Z_c
    prefactor = 4.0 * p.g**2 / (Z_h * Z_c * (p.gamma_h * Z_h + p.gamma_c * Z_c))
    p_up = prefactor * math.exp(-p.beta_h * p.E_h)
    p_down = prefactor * math.exp(-p.beta_c * p.E_c)
    return p_up, p_down


def engine_rates(params: ClockParams, warn: bool = True) -> tuple[float, float]:
    """Up and down hopping rates the engine induces on the ladder.

    Valid in the weak-coupling regime ``p_up, p_down << gamma_j``; a
    :class:`WeakCouplingWarning` is emitted outside of it.

    Returns
    -------
    p_up, p_down : float
    """
    if warn:
        warn_validity(params, only=WEAK_COUPLING_FLAG)
    return _rates(params)


def virtual_qubit(params: ClockParams, warn: bool = False) -> VirtualQubitDescriptor:
    beta_v = virtual_temperature(params)
    p_up, p_down = engine_rates(params, warn=warn)
    Q_c, Q_h, _ = heats(params)
    return VirtualQubitDescriptor(
        beta_v=beta_v,
        Z_v=math.tanh(beta_v * params.E_w / 2.0),
        p_up=p_up,
        p_down=p_down,
        Q_c=Q_c,
        Q_h=Q_h,
        delta_S_tick=params.beta_c * Q_c - params.beta_h * Q_h,
    )


def analytic_resolution(params: ClockParams) -> float:
    """Drift-limited tick rate ``(p_up - p_down) / d``.

    Raises
    ------
    NonOperational
        If the ladder does not drift upwards.
    """
    p_up, p_down = engine_rates(params, warn=False)
    if p_up <= p_down:
        raise NonOperational(f"p_up = {p_up} <= p_down = {p_down}")
    return (p_up - p_down) / params.d


def analytic_accuracy(params: ClockParams) -> float:
    """Weak-coupling accuracy ``d |Z_v|``; independent of all rates."""
    return params.d * abs(virtual_bias(params))


def accuracy_vs_heat(Q_c, d, beta_c, beta_h, E_gamma):
    """Weak-coupling accuracy as a function of the heat dissipated per tick.

    Works elementwise on numpy arrays. A negative value means the parameter
    choice does not drive the ladder upwards.
    """
    import numpy as np

    arg = ((beta_c - beta_h) * np.asarray(Q_c) - beta_h * np.asarray(E_gamma)) / (2.0 * d)
    out = d * np.tanh(arg)
    return float(out) if np.ndim(out) == 0 else out


def large_d_accuracy(Q_c, Q_h, beta_c, beta_h):
    """Limit ``d -> inf`` of :func:`accuracy_vs_heat`: half the entropy per tick."""
    return (beta_c * Q_c - beta_h * Q_h) / 2.0


def min_power_estimate(nu_tick: float, N: float, T_c: float, T_h: float = math.inf) -> float:
    """Minimal power in watts for a clock ticking at ``nu_tick`` Hz with accuracy ``N``.

    Inverts the large-``d`` accuracy bound for the cold-bath heat, dropping the
    photon-energy term, and multiplies by the tick rate. Temperatures in kelvin.
    """
    beta_c = 1.0 / T_c
    beta_h = 0.0 if math.isinf(T_h) else 1.0 / T_h
    if not beta_c > beta_h:
        raise InvalidParameters("min_power_estimate requires T_h > T_c")
    Q_c = 2.0 * N * K_B / (beta_c - beta_h)
    return nu_tick * Q_c
