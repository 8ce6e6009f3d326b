"""Parameter sweeps over ladder dimension and cold-qubit energy.

A sweep evaluates the tick statistics on a rectangular ``(d, E_c)`` grid
with one of three backends:

``"analytic"``  drift-diffusion closed forms (large-``d`` approximation)
``"chain"``     exact first-passage moments of the birth-death chain
``"quantum"``   exact moments of the full conditional master equation

Iso-curves are extracted from the grid by marching squares: every grid edge
along which the field crosses the requested level contributes one point,
located by linear interpolation along the edge (bilinear interpolation
restricted to the cell boundary). All other columns are interpolated at the
same edge position.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import chain, model, quantum
from .exceptions import ClockError, LevelNotBracketed

BACKENDS = ("analytic", "chain", "quantum")
QUANTUM_METHODS = ("resolvent", "quadrature")
RATE_MEASURES = ("entropy", "heat")


@dataclass(frozen=True)
class SweepRecord:
    """One grid point and its statistics. Statistics are ``None`` on error rows."""

    d: int
    E_c: float
    Q_c: float
    Q_h: float
    dS_tick: float
    t_tick: float | None
    dt_tick: float | None
    nu_tick: float | None
    N: float | None
    backend: str
    flags: tuple[str, ...] = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SweepGrid:
    """Rectangular ``(d, E_c)`` grid plus everything needed to evaluate it."""

    d_values: tuple[int, ...]
    E_c_values: tuple[float, ...]
    template: model.ClockParams = field(default_factory=model.ClockParams)
    backend: str = "chain"
    boundary: str = "leaky"
    quantum_method: str = "resolvent"
    quantum_d_max: int = 60
    rtol: float = 1e-8
    atol: float = 1e-12
    eps: float = 1e-9
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "d_values", tuple(int(d) for d in self.d_values))
        object.__setattr__(self, "E_c_values", tuple(float(e) for e in self.E_c_values))
        for name in ("d_values", "E_c_values"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if self.d_values[0] < 2:
            raise ValueError("ladder dimensions must be >= 2")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.boundary not in chain.BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {chain.BOUNDARY_MODES}")
        if self.quantum_method not in QUANTUM_METHODS:
            raise ValueError(f"quantum_method must be one of {QUANTUM_METHODS}")

    def points(self):
        return [(d, e) for d in self.d_values for e in self.E_c_values]


def compute_statistics(
    params: model.ClockParams,
    backend: str = "chain",
    boundary: str = "leaky",
    quantum_method: str = "resolvent",
    rtol: float = 1e-8,
    atol: float = 1e-12,
    eps: float = 1e-9,
) -> model.TickStatistics:
    """Tick statistics of one parameter set with the selected backend."""
    if backend == "analytic":
        dd = chain.drift_diffusion_stats(chain.ChainSpec.from_params(params, boundary))
        return model.TickStatistics(dd.t_tick, dd.dt_tick)
    if backend == "chain":
        return chain.first_passage_moments(chain.ChainSpec.from_params(params, boundary))
    if backend == "quantum":
        if quantum_method == "resolvent":
            return quantum.resolvent_statistics(params)
        wtd = quantum.simulate(params, tol=rtol, atol=atol, eps=eps, check_physicality=False)
        return quantum.tick_moments_quadrature(wtd)
    raise ValueError(f"unknown backend {backend!r}")


def compute_record(params: model.ClockParams, backend: str = "chain", **options) -> SweepRecord:
    """Evaluate one grid point; failures become error rows instead of raising."""
    Q_c, Q_h, _ = model.heats(params)
    dS = model.entropy_per_tick(params)
    flags = model.validity_flags(params)
    base = dict(d=params.d, E_c=params.E_c, Q_c=Q_c, Q_h=Q_h, dS_tick=dS, backend=backend, flags=flags)
    d_max = options.pop("quantum_d_max", None)
    if backend == "quantum" and d_max is not None and params.d > d_max:
        return SweepRecord(**base, t_tick=None, dt_tick=None, nu_tick=None, N=None, error="DimensionCap")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", model.WeakCouplingWarning)
            warnings.simplefilter("ignore", model.ReabsorptionWarning)
            stats = compute_statistics(params, backend, **options)
    except (ClockError, ValueError) as exc:
        return SweepRecord(**base, t_tick=None, dt_tick=None, nu_tick=None, N=None, error=type(exc).__name__)
    return SweepRecord(
        **base, t_tick=stats.t_tick, dt_tick=stats.dt_tick, nu_tick=stats.nu_tick, N=stats.N
    )


def _evaluate(args):
    grid, d, E_c = args
    params = grid.template.replace(d=d, E_c=E_c)
    return compute_record(
        params,
        grid.backend,
        boundary=grid.boundary,
        quantum_method=grid.quantum_method,
        quantum_d_max=grid.quantum_d_max,
        rtol=grid.rtol,
        atol=grid.atol,
        eps=grid.eps,
    )


def run_sweep(grid: SweepGrid) -> list[SweepRecord]:
    """One record per ``(d, E_c)``, ``d`` outermost, in grid order.

    Grid points are independent; with ``workers > 1`` they are farmed out to
    a process pool, and the result order does not depend on completion order.
    """
    jobs = [(grid, d, e) for d, e in grid.points()]
    if grid.workers > 1:
        with ProcessPoolExecutor(max_workers=grid.workers) as pool:
            return list(pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * grid.workers))))
    return [_evaluate(job) for job in jobs]


# ---------------------------------------------------------------- contours


@dataclass(frozen=True)
class IsoCurve:
    """Points along one contour level, interpolated on grid edges.

    ``order_by`` names the column the points are sorted by.
    """

    quantity: str
    level: float
    order_by: str
    d: np.ndarray
    E_c: np.ndarray
    Q_c: np.ndarray
    nu_tick: np.ndarray
    N: np.ndarray
    rate: np.ndarray

    def __len__(self):
        return len(self.d)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)


_COLUMNS = ("d", "E_c", "Q_c", "nu_tick", "N", "rate")


def _grid_arrays(records, rate_measure="entropy"):
    d_vals = sorted({r.d for r in records})
    e_vals = sorted({r.E_c for r in records})
    if len(d_vals) * len(e_vals) != len(records):
        raise ValueError("records do not form a rectangular (d, E_c) grid")
    index = {(r.d, r.E_c): r for r in records}
    if len(index) != len(records):
        raise ValueError("duplicate grid points")
    shape = (len(d_vals), len(e_vals))
    cols = {name: np.full(shape, np.nan) for name in _COLUMNS}
    for i, d in enumerate(d_vals):
        for j, e in enumerate(e_vals):
            r = index[(d, e)]
            cols["d"][i, j] = d
            cols["E_c"][i, j] = e
            cols["Q_c"][i, j] = r.Q_c
            if r.ok:
                cols["nu_tick"][i, j] = r.nu_tick
                cols["N"][i, j] = r.N
                heat = r.dS_tick if rate_measure == "entropy" else r.Q_c
                cols["rate"][i, j] = heat * r.nu_tick
    return cols


def _boundary_points(cols):
    n, m = cols["d"].shape
    ring = (
        [(0, j) for j in range(m)]
        + [(i, m - 1) for i in range(1, n)]
        + [(n - 1, j) for j in range(m - 2, -1, -1)]
        + [(i, 0) for i in range(n - 2, 0, -1)]
    )
    seen = []
    for p in ring:
        if p not in seen:
            seen.append(p)
    return {name: np.array([cols[name][p] for p in seen]) for name in _COLUMNS}


def _contour(cols, field_name, level, order_by):
    F = cols[field_name]
    finite = np.isfinite(F)
    if np.all(finite) and np.all(F == level):
        pts = _boundary_points(cols)
        return pts
    pts = {name: [] for name in _COLUMNS}
    seen = set()

    def add_vertex(i, j):
        if (i, j, i, j) in seen:
            return
        seen.add((i, j, i, j))
        for name in _COLUMNS:
            pts[name].append(cols[name][i, j])

    def add_edge(a, b):
        fa, fb = F[a] - level, F[b] - level
        if fa == 0.0:
            add_vertex(*a)
        if fb == 0.0:
            add_vertex(*b)
        if fa * fb < 0:
            s = fa / (fa - fb)
            for name in _COLUMNS:
                pts[name].append((1 - s) * cols[name][a] + s * cols[name][b])

    n, m = F.shape
    for i in range(n):
        for j in range(m):
            if not finite[i, j]:
                continue
            if i + 1 < n and finite[i + 1, j]:
                add_edge((i, j), (i + 1, j))
            if j + 1 < m and finite[i, j + 1]:
                add_edge((i, j), (i, j + 1))
    if not pts["d"]:
        raise LevelNotBracketed(f"{field_name} level {level} never crosses the grid")
    arrays = {name: np.asarray(v, dtype=float) for name, v in pts.items()}
    order = np.lexsort((arrays["E_c"], arrays["d"], arrays[order_by]))
    return {name: v[order] for name, v in arrays.items()}


def _curves(records, field_name, levels, order_by, rate_measure):
    if rate_measure not in RATE_MEASURES:
        raise ValueError(f"rate_measure must be one of {RATE_MEASURES}")
    cols = _grid_arrays(records, rate_measure)
    out = []
    for level in levels:
        pts = _contour(cols, field_name, float(level), order_by)
        out.append(IsoCurve(quantity=field_name, level=float(level), order_by=order_by, **pts))
    return out


def extract_iso_curves(records, quantity: str, levels) -> list[IsoCurve]:
    """Contours of ``nu_tick`` or ``N`` over the grid, ordered by ``Q_c``.

    Raises
    ------
    LevelNotBracketed
        If a level never crosses the grid.
    """
    if quantity not in ("nu_tick", "N"):
        raise ValueError("quantity must be 'nu_tick' or 'N'")
    return _curves(records, quantity, levels, "Q_c", "entropy")


def fixed_entropy_frontier(records, rate_levels, rate_measure: str = "entropy") -> list[IsoCurve]:
    """Accuracy-resolution frontiers at fixed dissipation rate, ordered by ``nu_tick``.

    ``rate_measure="entropy"`` uses the entropy production rate
    ``dS_tick * nu_tick``; ``"heat"`` uses ``Q_c * nu_tick``.
    """
    return _curves(records, "rate", rate_levels, "nu_tick", rate_measure)


def figure3_curves(d_list, Q_c, beta_c: float, beta_h: float, E_w: float = 1.0) -> dict:
    """Weak-coupling accuracy against dissipated heat for each ladder dimension.

    Returns
    -------
    dict
        Maps each ``d`` to an array of ``N`` values on the ``Q_c`` grid.
    """
    Q_c = np.asarray(Q_c, dtype=float)
    return {
        int(d): np.asarray(model.accuracy_vs_heat(Q_c, d, beta_c, beta_h, (d - 1) * E_w))
        for d in d_list
    }


def default_E_c_values(n: int = 16) -> tuple[float, ...]:
    return tuple(float(x) for x in np.geomspace(0.25, 4.0, n))


def default_d_values() -> tuple[int, ...]:
    return tuple(range(10, 61, 5))


def monotone_violation(x: np.ndarray, y: np.ndarray, increasing: bool = True) -> float:
    """Largest step against the requested direction, relative to ``max |y|``.

    Steps between points that share the same ``x`` are ignored.
    """
    dy = np.diff(y)
    dx = np.diff(x)
    dy = dy[dx > 0]
    if dy.size == 0:
        return 0.0
    worst = -dy.min() if increasing else dy.max()
    return max(0.0, float(worst)) / max(float(np.max(np.abs(y))), math.ulp(1.0))
