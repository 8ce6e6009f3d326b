"""Self-check battery behind the ``validate`` subcommand.

Each check returns a :class:`CheckResult` with the worst deviation it saw
and the tolerance it was held to. Nothing is random: sampled parameter sets
come from an unscrambled Halton sequence, so every run sees the same points.
"""

from __future__ import annotations

import math
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import chain, model, quantum, sweep
from .exceptions import ClockError, ValidityWarning

FAULTS = ("p_down_sign",)
_active_faults: set[str] = set()


@contextmanager
def inject_fault(name: str):
    """Deliberately break one ingredient so that a check must fail.

    ``"p_down_sign"`` flips the sign of ``p_down`` as seen by the checks.
    """
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    _active_faults.add(name)
    try:
        yield
    finally:
        _active_faults.discard(name)


def _rates(params):
    p_up, p_down = model.engine_rates(params, warn=False)
    if "p_down_sign" in _active_faults:
        p_down = -p_down
    return p_up, p_down


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<22} worst={self.worst:.3e} tol={self.tolerance:.1e}"
        if self.detail:
            text += f"  {self.detail}"
        return text


@dataclass
class _Physicality:
    """Worst physicality figures over a set of evolutions."""

    trace_increase: float = 0.0
    hermiticity: float = 0.0
    min_eigenvalue: float = math.inf
    mass_error: float = 0.0
    count: int = 0
    labels: list = field(default_factory=list)

    def add(self, wtd, label):
        m = wtd.metadata
        self.trace_increase = max(self.trace_increase, m["max_trace_increase"])
        self.hermiticity = max(self.hermiticity, m["max_hermiticity_error"])
        self.min_eigenvalue = min(self.min_eigenvalue, m["min_eigenvalue"])
        self.mass_error = max(self.mass_error, abs(wtd.total_mass() - 1.0))
        self.count += 1
        self.labels.append(label)


DEFAULT = model.ClockParams()


def halton_params(n: int = 10_000) -> list[model.ClockParams]:
    """Deterministic spread of valid parameter sets over a broad box."""
    u = qmc.Halton(d=7, scramble=False).random(n + 1)[1:]  # drop the all-zero point
    out = []
    for row in u:
        T_c = 10 ** (-1 + 1.5 * row[0])
        out.append(
            model.ClockParams(
                E_c=10 ** (-1 + 1.5 * row[1]),
                d=2 + int(row[2] * 99),
                g=10 ** (-5 + 4 * row[3]),
                gamma_h=10 ** (-3 + 2 * row[4]),
                gamma_c=10 ** (-3 + 2 * row[5]),
                Gamma=0.05,
                T_c=T_c,
                T_h=T_c * 10 ** (0.01 + 4 * row[6]),
            )
        )
    return out


def check_detailed_balance(n: int = 10_000) -> CheckResult:
    worst = 0.0
    for p in halton_params(n):
        p_up, p_down = _rates(p)
        expected = math.exp(-model.virtual_temperature(p) * p.E_w)
        ratio = p_up / p_down if p_down != 0 else math.inf
        worst = max(worst, abs(ratio / expected - 1.0))
    return CheckResult("detailed_balance", worst <= 1e-12, worst, 1e-12, f"{n} Halton points")


def check_oracle(d_max: int = 50) -> CheckResult:
    worst = 0.0
    for d in range(2, d_max + 1):
        for ratio in (1.1, 2.0, 10.0):
            for spec in (
                chain.ChainSpec(d, ratio, 1.0, boundary="absorbing"),
                chain.ChainSpec(d, ratio, 1.0, Gamma=0.7, boundary="leaky"),
            ):
                stats = chain.first_passage_moments(spec)
                mean, var = chain.birth_death_recursion(spec)
                worst = max(worst, abs(stats.t_tick / mean - 1), abs(stats.variance / var - 1))
    anchor = chain.first_passage_moments(chain.ChainSpec(10, 2.0, 1.0, boundary="absorbing")).t_tick
    anchor_err = abs(anchor / 8.001953125 - 1)
    worst = max(worst, anchor_err)
    return CheckResult("oracle_agreement", worst <= 1e-10, worst, 1e-10, f"t_tick(d=10,2,1)={anchor!r}")


def check_moment_methods(d_values=(2, 5, 10), phys: _Physicality | None = None) -> CheckResult:
    worst = 0.0
    for d in d_values:
        p = DEFAULT.replace(d=d)
        wtd = quantum.simulate(p)
        q = quantum.tick_moments_quadrature(wtd)
        r = quantum.resolvent_statistics(p)
        worst = max(worst, abs(q.t_tick / r.t_tick - 1), abs(q.N / r.N - 1))
        if phys is not None:
            phys.add(wtd, f"default d={d}")
    return CheckResult("moment_equivalence", worst <= 1e-4, worst, 1e-4, f"d in {tuple(d_values)}")


WEAK_G = (1e-3, 1e-4, 1e-5)


def weak_coupling_errors(d: int, g_values=WEAK_G, phys: _Physicality | None = None):
    """Relative quantum-vs-chain errors ``(t_tick, N)`` for each ``g = Gamma``.

    The quadrature route is returned alongside the resolvent route.
    """
    quad, res = [], []
    for g in g_values:
        p = DEFAULT.replace(d=d, g=g, Gamma=g)
        exact = chain.first_passage_moments(chain.ChainSpec.from_params(p, "leaky"))
        wtd = quantum.simulate(p)
        if phys is not None:
            phys.add(wtd, f"weak d={d} g={g:g}")
        q = quantum.tick_moments_quadrature(wtd)
        r = quantum.resolvent_statistics(p)
        quad.append((abs(q.t_tick / exact.t_tick - 1), abs(q.N / exact.N - 1)))
        res.append((abs(r.t_tick / exact.t_tick - 1), abs(r.N / exact.N - 1)))
    return quad, res


def check_weak_coupling(d_values=(5, 10, 15), phys: _Physicality | None = None) -> CheckResult:
    worst = 0.0
    monotone = True
    for d in d_values:
        quad, res = weak_coupling_errors(d, phys=phys)
        worst = max(worst, *quad[0], *res[0])
        for col in (0, 1):
            seq = [e[col] for e in res]
            monotone &= all(b < a for a, b in zip(seq, seq[1:]))
    passed = worst <= 0.05 and monotone
    return CheckResult("weak_coupling", passed, worst, 0.05, f"monotone={monotone}")


def closed_form_offsets(E_c: float, d_values=(10, 30, 100, 300)) -> list[float]:
    """Relative offset of the exact absorbing-chain ``N`` from ``d |Z_v|``."""
    out = []
    for d in d_values:
        p = DEFAULT.replace(d=d, E_c=E_c)
        stats = chain.first_passage_moments(chain.ChainSpec.from_params(p, "absorbing"))
        out.append(stats.N / model.analytic_accuracy(p) - 1.0)
    return out


OFFSET_E_C = (0.5, 2.0, 4.0)


def check_closed_form(E_c_values=OFFSET_E_C) -> CheckResult:
    worst = 0.0
    shrinking = True
    for E_c in E_c_values:
        offs = [abs(x) for x in closed_form_offsets(E_c)]
        worst = max(worst, offs[2])  # d = 100
        shrinking &= all(b < a for a, b in zip(offs, offs[1:]))
    return CheckResult("closed_form_accuracy", worst <= 0.03 and shrinking, worst, 0.03, f"shrinking={shrinking}")


def figure3_shape(d_list=(10, 100, 1000)) -> tuple[float, float]:
    """Worst relative slope error at small heat and worst gap to ``N = d`` at large heat."""
    p = DEFAULT
    slope_expected = (p.beta_c - p.beta_h) / 2
    small = np.array([0.0, 1e-3])
    slope_err = 0.0
    sat_err = 0.0
    for d in d_list:
        Q_small = small + (d - 1) * p.beta_h / (p.beta_c - p.beta_h) * p.E_w
        curve = sweep.figure3_curves([d], Q_small, p.beta_c, p.beta_h, p.E_w)[d]
        slope = (curve[1] - curve[0]) / (Q_small[1] - Q_small[0])
        slope_err = max(slope_err, abs(slope / slope_expected - 1))
        Q_big = 50.0 * d / (p.beta_c - p.beta_h)
        N_big = sweep.figure3_curves([d], [Q_big], p.beta_c, p.beta_h, p.E_w)[d][0]
        sat_err = max(sat_err, abs(N_big - d))
    return slope_err, sat_err


def check_figure3() -> CheckResult:
    slope_err, sat_err = figure3_shape()
    passed = slope_err <= 0.01 and sat_err <= 1e-6
    return CheckResult(
        "figure3_shape", passed, slope_err, 0.01, f"saturation gap={sat_err:.1e} (tol 1e-06)"
    )


def grid_records(d_values=None, E_c_values=None, workers: int = 1):
    grid = sweep.SweepGrid(
        d_values=d_values or sweep.default_d_values(),
        E_c_values=E_c_values or sweep.default_E_c_values(),
        template=DEFAULT,
        backend="chain",
        boundary="leaky",
        workers=workers,
    )
    return sweep.run_sweep(grid)


def _interior_levels(values, count, log=True):
    lo, hi = np.nanmin(values), np.nanmax(values)
    grid = np.geomspace(lo, hi, count + 2) if log else np.linspace(lo, hi, count + 2)
    return [float(x) for x in grid[1:-1]]


def _slopes(x, y):
    keep = np.concatenate([[True], np.diff(x) > 0])
    x, y = x[keep], y[keep]
    return np.diff(y) / np.diff(x)


# a curve "saturates" when its mean slope over the high-heat half is at most
# this fraction of the mean slope over the low-heat half
SATURATION_RATIO = 0.75


def _flattening(x, y) -> float:
    s = _slopes(x, y)
    half = len(s) // 2
    ratio = float(np.mean(s[half:]) / np.mean(s[:half]))
    return max(0.0, ratio - SATURATION_RATIO)


def grid_shape(records, tol: float = 1e-9) -> dict:
    """Shape properties of the three iso-curve families, as named deviations.

    Every entry is a non-negative deviation; zero means the property holds
    exactly.
    """
    nu = np.array([r.nu_tick for r in records])
    rate = np.array([r.dS_tick * r.nu_tick for r in records])
    out = {}

    # upper half of the resolution range: lower levels leave the d <= 60 window
    # through the d edge before their accuracy has had room to level off
    nu_levels = [float(x) for x in np.geomspace(np.median(nu), nu.max(), 6)[1:-1]]
    nu_curves = sweep.extract_iso_curves(records, "nu_tick", nu_levels)
    out["a_monotone"] = max(sweep.monotone_violation(c.Q_c, c.N) for c in nu_curves)
    out["a_saturating"] = max(_flattening(c.Q_c, c.N) for c in nu_curves)

    N_levels = [10.0, 15.0, 20.0, 30.0]
    N_curves = sweep.extract_iso_curves(records, "N", N_levels)
    out["b_rising"] = max(sweep.monotone_violation(c.Q_c, c.nu_tick) for c in N_curves)
    out["b_saturating"] = max(_flattening(c.Q_c, c.nu_tick) for c in N_curves)

    fronts = sweep.fixed_entropy_frontier(records, _interior_levels(rate, 4))
    out["c_monotone"] = max(sweep.monotone_violation(c.nu_tick, c.N, increasing=False) for c in fronts)
    # ordering: on the shared resolution window, a higher rate level never has lower accuracy
    order = 0.0
    for low, high in zip(fronts, fronts[1:]):
        lo = max(low.nu_tick.min(), high.nu_tick.min())
        hi = min(low.nu_tick.max(), high.nu_tick.max())
        if hi <= lo:
            continue
        x = np.linspace(lo, hi, 50)
        gap = np.interp(x, low.nu_tick, low.N) - np.interp(x, high.nu_tick, high.N)
        order = max(order, float(gap.max()) / float(high.N.max()))
    out["c_ordered"] = max(0.0, order)
    return out


def check_grid_shape(workers: int = 1) -> CheckResult:
    # the chain backend is cheap, so quick mode keeps the full desk-scale grid
    records = grid_records(workers=workers)
    bad = [r for r in records if not r.ok]
    shape = grid_shape(records)
    worst = max(shape.values())
    failing = [k for k, v in shape.items() if v > 1e-9]
    passed = not bad and not failing
    detail = f"{len(records)} points"
    if failing:
        detail += " failing: " + ",".join(failing)
    if bad:
        detail += f" {len(bad)} error rows"
    return CheckResult("grid_shape", passed, worst, 1e-9, detail)


def check_power() -> CheckResult:
    value = model.min_power_estimate(1e10, 1e6, 300.0, math.inf)
    dev = abs(math.log10(value / 5e-5))
    return CheckResult("power_estimate", dev <= 1.0, dev, 1.0, f"P={value:.3e} W (log10 distance to 5e-5)")


def check_physicality(phys: _Physicality) -> CheckResult:
    if phys.count == 0:
        return CheckResult("physicality", False, math.inf, 0.0, "no evolutions recorded")
    fails = []
    if phys.trace_increase > 1e-12:
        fails.append("trace")
    if phys.hermiticity >= 1e-10:
        fails.append("hermiticity")
    if phys.min_eigenvalue <= -1e-9:
        fails.append("positivity")
    if phys.mass_error > 1e-6:
        fails.append("mass")
    detail = (
        f"{phys.count} runs; trace+ {phys.trace_increase:.1e} herm {phys.hermiticity:.1e} "
        f"min_eig {phys.min_eigenvalue:.1e} mass {phys.mass_error:.1e}"
    )
    if fails:
        detail += " failing: " + ",".join(fails)
    return CheckResult("physicality", not fails, phys.mass_error, 1e-6, detail)


def check_determinism() -> CheckResult:
    from .io import records_to_csv

    def once():
        grid = sweep.SweepGrid((10, 15, 20), (0.5, 1.0, 2.0), DEFAULT, backend="chain")
        return records_to_csv(sweep.run_sweep(grid)).encode()

    a, b = once(), once()
    return CheckResult("determinism", a == b, 0.0 if a == b else 1.0, 0.0, f"{len(a)} bytes")


def run_checks(quick: bool = False, workers: int = 1, progress=None) -> list[CheckResult]:
    """Run the battery; ``quick`` trims grids so the whole run takes well under a minute."""
    phys = _Physicality()
    plan = [
        ("detailed_balance", lambda: check_detailed_balance(2000 if quick else 10_000)),
        ("oracle_agreement", lambda: check_oracle(20 if quick else 50)),
        ("moment_equivalence", lambda: check_moment_methods((2, 5) if quick else (2, 5, 10), phys)),
        ("weak_coupling", lambda: check_weak_coupling((5,) if quick else (5, 10, 15), phys)),
        ("closed_form_accuracy", check_closed_form),
        ("figure3_shape", check_figure3),
        ("grid_shape", lambda: check_grid_shape(workers)),
        ("power_estimate", check_power),
        ("physicality", lambda: check_physicality(phys)),
        ("determinism", check_determinism),
    ]
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        for name, step in plan:
            start = time.perf_counter()
            try:
                result = step()
            except (ClockError, ValueError, ArithmeticError) as exc:
                result = CheckResult(name, False, math.inf, 0.0, f"{type(exc).__name__}: {exc}")
            result.seconds = time.perf_counter() - start
            results.append(result)
            if progress is not None:
                progress(result)
    return results
