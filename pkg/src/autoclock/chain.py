"""Classical reduction of the clock: a biased birth-death chain on the ladder.

Two boundary conventions are supported at the top of the ladder:

``"leaky"``
    The top level decays with the finite emission rate ``Gamma`` and can
    still hop back down. This matches the quantum model.
``"absorbing"``
    The tick happens the moment the top level is reached (``Gamma -> inf``).

The bottom level is always reflecting. Emission-time moments are computed
exactly with tridiagonal linear solves. :func:`birth_death_recursion` computes
the same moments by an independent level-by-level recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import expm_multiply

from .exceptions import NonOperational
from .model import ClockParams, TickStatistics, engine_rates

BOUNDARY_MODES = ("leaky", "absorbing")


@dataclass(frozen=True)
class ChainSpec:
    """Birth-death chain with ``d`` levels and level-independent hopping rates."""

    d: int
    p_up: float
    p_down: float
    Gamma: float = math.inf
    boundary: str = "absorbing"

    def __post_init__(self):
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if min(self.p_up, self.p_down) < 0 or not self.p_up + self.p_down > 0:
            raise ValueError(f"invalid rates p_up={self.p_up}, p_down={self.p_down}")
        if self.boundary == "leaky" and not (0 <= self.Gamma < math.inf):
            raise ValueError("leaky boundary needs a finite Gamma >= 0")

    @classmethod
    def from_params(cls, params: ClockParams, boundary: str = "leaky") -> "ChainSpec":
        p_up, p_down = engine_rates(params, warn=False)
        gamma = params.Gamma if boundary == "leaky" else math.inf
        return cls(params.d, p_up, p_down, gamma, boundary)

    def scaled(self, c: float) -> "ChainSpec":
        """Same chain with every rate multiplied by ``c``."""
        gamma = self.Gamma * c if math.isfinite(self.Gamma) else self.Gamma
        return ChainSpec(self.d, c * self.p_up, c * self.p_down, gamma, self.boundary)

    @property
    def transient(self) -> int:
        """Number of transient levels (counted from the bottom)."""
        return self.d if self.boundary == "leaky" else self.d - 1


@dataclass(frozen=True)
class DriftDiffusionStats:
    mu_rate: float
    var_rate: float
    t_tick: float
    dt_tick: float
    nu_tick: float
    N: float


@dataclass(frozen=True)
class ChainTrajectory:
    """Solution of the chain master equation on a time grid.

    ``q`` has shape ``(len(t), d)``; ``survival`` sums the transient levels and
    ``density`` is the emission-time density.
    """

    t: np.ndarray
    q: np.ndarray
    survival: np.ndarray
    density: np.ndarray


def build_chain_generator(spec: ChainSpec) -> sp.csr_matrix:
    """Tridiagonal rate matrix ``A`` with ``dq/dt = A q``.

    Column ``n`` holds the outflow of level ``n``: ``p_up`` into ``n+1`` and
    ``p_down`` into ``n-1``. In leaky mode the top column sums to
    ``-Gamma``; in absorbing mode the top level is a sink with a zero column.
    """
    d, up, down = spec.d, spec.p_up, spec.p_down
    sub = np.full(d - 1, up)  # A[n+1, n]
    sup = np.full(d - 1, down)  # A[n-1, n]
    diag = np.full(d, -(up + down))
    diag[0] = -up
    if spec.boundary == "leaky":
        diag[-1] = -(down + spec.Gamma)
    else:
        diag[-1] = 0.0
        sup[-1] = 0.0
    return sp.diags([sub, diag, sup], [-1, 0, 1], shape=(d, d), format="csr")


def _transient_banded_transpose(spec: ChainSpec) -> np.ndarray:
    """Banded storage of ``A^T`` restricted to the transient levels."""
    A = build_chain_generator(spec).toarray()
    n = spec.transient
    At = A[:n, :n].T
    ab = np.zeros((3, n))
    ab[0, 1:] = np.diag(At, 1)
    ab[1, :] = np.diag(At)
    ab[2, :-1] = np.diag(At, -1)
    return ab


def first_passage_moments(spec: ChainSpec) -> TickStatistics:
    """Exact mean and variance of the emission time starting from level 0.

    Solves the backward equations ``A_T^T m = -1`` and ``A_T^T s = -2 m`` on
    the transient levels ``T``.

    Raises
    ------
    NonOperational
        If emission is not certain (no upward rate or no leak).
    """
    if spec.p_up <= 0:
        raise NonOperational("p_up = 0: the top of the ladder is never reached")
    if spec.boundary == "leaky" and spec.Gamma <= 0:
        raise NonOperational("Gamma = 0: the top level never emits")
    ab = _transient_banded_transpose(spec)
    n = spec.transient
    ones = np.ones(n)
    try:
        m = solve_banded((1, 1), ab, -ones)
        s = solve_banded((1, 1), ab, -2.0 * m)
    except np.linalg.LinAlgError as exc:
        raise NonOperational(f"chain generator is singular: {exc}") from exc
    if not (np.all(np.isfinite(m)) and m[0] > 0):
        raise NonOperational("non-physical first-passage solution")
    return TickStatistics.from_moments(m[0], s[0])


def birth_death_recursion(spec: ChainSpec) -> tuple[float, float]:
    """Mean and variance of the emission time via a level-by-level recursion.

    The passage time from level ``k`` to ``k+1`` obeys
    ``t_k = 1/p_up + (p_down/p_up) t_{k-1}`` with ``t_0 = 1/p_up``; the
    passages are independent, so means and variances add. In leaky mode
    the final stage (emission from the top, possibly after excursions down)
    is appended the same way.
    """
    up, down = spec.p_up, spec.p_down
    if up <= 0:
        raise NonOperational("p_up = 0")
    lam = up + down
    q = down / lam
    # mean t and second moment s of each single-step passage k -> k+1
    t_prev, s_prev = 1.0 / up, 2.0 / up**2
    means, seconds = [t_prev], [s_prev]
    for _ in range(1, spec.d - 1):
        t_k = 1.0 / up + (down / up) * t_prev
        s_k = (
            2.0 / lam**2
            + 2.0 * q * (t_prev + t_k) / lam
            + q * (s_prev + 2.0 * t_prev * t_k)
        ) / (1.0 - q)
        means.append(t_k)
        seconds.append(s_k)
        t_prev, s_prev = t_k, s_k
    mean = math.fsum(means)
    var = math.fsum(s - t * t for t, s in zip(means, seconds))
    if spec.boundary == "leaky":
        G = spec.Gamma
        if G <= 0:
            raise NonOperational("Gamma = 0")
        rate = down + G
        r = down / rate
        # top stage: wait Exp(rate), then either emit or fall to d-2 and climb back
        t_below, s_below = (t_prev, s_prev) if spec.d > 2 else (1.0 / up, 2.0 / up**2)
        u = (1.0 + down * t_below) / G
        s_u = (
            2.0 / rate**2
            + 2.0 * r * (t_below + u) / rate
            + r * (s_below + 2.0 * t_below * u)
        ) / (1.0 - r)
        mean += u
        var += s_u - u * u
    return mean, var


def drift_diffusion_stats(spec: ChainSpec) -> DriftDiffusionStats:
    """Large-``d`` drift-diffusion estimates of the tick statistics.

    The ladder is treated as unbounded: the mean position grows at
    ``p_up - p_down`` and the variance at ``p_up + p_down``.
    """
    up, down, d = spec.p_up, spec.p_down, spec.d
    if up <= down:
        raise NonOperational(f"p_up = {up} <= p_down = {down}")
    drift = up - down
    diffusion = up + down
    return DriftDiffusionStats(
        mu_rate=drift,
        var_rate=diffusion,
        t_tick=d / drift,
        dt_tick=math.sqrt(d) / drift * math.sqrt(diffusion / drift),
        nu_tick=drift / d,
        N=d * drift / diffusion,
    )


def classical_evolve(spec: ChainSpec, q0, t_end: float, num: int = 201) -> ChainTrajectory:
    """Integrate ``dq/dt = A q`` on a uniform grid of ``num`` points in ``[0, t_end]``."""
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (spec.d,) or np.any(q0 < 0) or not math.isclose(q0.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("q0 must be a normalized non-negative vector of length d")
    A = build_chain_generator(spec).tocsc()
    t = np.linspace(0.0, t_end, num)
    q = expm_multiply(A, q0, start=0.0, stop=t_end, num=num, endpoint=True)
    q = np.asarray(q)
    if spec.boundary == "leaky":
        survival = q.sum(axis=1)
        density = spec.Gamma * q[:, -1]
    else:
        survival = q[:, :-1].sum(axis=1)
        density = spec.p_up * q[:, -2]
    return ChainTrajectory(t=t, q=q, survival=survival, density=density)
