import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from autoclock import model
from autoclock.chain import (
    ChainSpec,
    birth_death_recursion,
    build_chain_generator,
    classical_evolve,
    drift_diffusion_stats,
    first_passage_moments,
)
from autoclock.exceptions import NonOperational


def exact_mean(d, up, down):
    """Absorbing-top mean passage time in exact rational arithmetic."""
    t = Fraction(1) / up
    total = t
    for _ in range(1, d - 1):
        t = Fraction(1) / up + Fraction(down) / up * t
        total += t
    return total


@st.composite
def specs(draw):
    # upward drift only: with p_down >> p_up the mean grows like (p_down/p_up)**d
    # and any linear solve loses that many digits
    p_up = draw(st.floats(0.05, 20.0))
    boundary = draw(st.sampled_from(["leaky", "absorbing"]))
    return ChainSpec(
        d=draw(st.integers(2, 40)),
        p_up=p_up,
        p_down=p_up * draw(st.floats(0.0, 1.0)),
        Gamma=draw(st.floats(0.01, 50.0)) if boundary == "leaky" else math.inf,
        boundary=boundary,
    )


def test_spec_validation():
    with pytest.raises(ValueError):
        ChainSpec(1, 1.0, 1.0)
    with pytest.raises(ValueError):
        ChainSpec(5, -1.0, 1.0)
    with pytest.raises(ValueError):
        ChainSpec(5, 0.0, 0.0)
    with pytest.raises(ValueError):
        ChainSpec(5, 1.0, 1.0, boundary="leaky")
    with pytest.raises(ValueError):
        ChainSpec(5, 1.0, 1.0, boundary="sticky")


def test_generator_d2():
    A = build_chain_generator(ChainSpec(2, 2.0, 0.5, Gamma=0.3, boundary="leaky")).toarray()
    np.testing.assert_array_equal(A, [[-2.0, 0.5], [2.0, -0.8]])


@settings(max_examples=100, deadline=None)
@given(specs())
def test_generator_column_sums(spec):
    A = build_chain_generator(spec).toarray()
    sums = A.sum(axis=0)
    np.testing.assert_allclose(sums[:-1], 0.0, atol=1e-12)
    expected_top = -spec.Gamma if spec.boundary == "leaky" else 0.0
    assert sums[-1] == pytest.approx(expected_top, abs=1e-12)
    assert np.count_nonzero(np.triu(A, 2)) == np.count_nonzero(np.tril(A, -2)) == 0


def test_closed_chain_stationary():
    spec = ChainSpec(8, 1.5, 1.0, Gamma=0.0, boundary="leaky")
    A = build_chain_generator(spec).toarray()
    pi = 1.5 ** np.arange(8)
    np.testing.assert_allclose(A @ pi, 0.0, atol=1e-12)


def test_anchor_value():
    spec = ChainSpec(10, 2.0, 1.0, boundary="absorbing")
    assert exact_mean(10, 2, 1) == Fraction(4097, 512)
    assert first_passage_moments(spec).t_tick == pytest.approx(8.001953125, rel=1e-14)
    assert birth_death_recursion(spec)[0] == pytest.approx(8.001953125, rel=1e-15)


def test_pure_birth():
    s = first_passage_moments(ChainSpec(5, 1.0, 0.0, boundary="absorbing"))
    assert s.t_tick == pytest.approx(4.0, rel=1e-14)
    assert s.variance == pytest.approx(4.0, rel=1e-14)
    assert s.N == pytest.approx(4.0, rel=1e-14)


@pytest.mark.parametrize("boundary", ["leaky", "absorbing"])
@pytest.mark.parametrize("ratio", [1.1, 2.0, 10.0])
@pytest.mark.parametrize("d", [2, 3, 5, 8, 13, 21, 34, 50])
def test_solve_matches_recursion(d, ratio, boundary):
    spec = ChainSpec(d, ratio, 1.0, Gamma=0.7, boundary=boundary)
    stats = first_passage_moments(spec)
    mean, var = birth_death_recursion(spec)
    assert stats.t_tick == pytest.approx(mean, rel=1e-10)
    assert stats.variance == pytest.approx(var, rel=1e-10)
    if boundary == "absorbing":
        assert stats.t_tick == pytest.approx(float(exact_mean(d, Fraction(ratio), 1)), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(specs())
def test_solve_matches_recursion_property(spec):
    stats = first_passage_moments(spec)
    mean, var = birth_death_recursion(spec)
    assert stats.t_tick == pytest.approx(mean, rel=1e-9)
    assert stats.variance == pytest.approx(var, rel=1e-8)


def test_leaky_approaches_absorbing():
    up, down = 2.0, 1.0
    absorbing = first_passage_moments(ChainSpec(10, up, down, boundary="absorbing"))
    leaky = first_passage_moments(ChainSpec(10, up, down, Gamma=1e3 * (up + down), boundary="leaky"))
    assert leaky.t_tick / absorbing.t_tick - 1 < 1e-3
    assert abs(leaky.N / absorbing.N - 1) < 1e-3


def test_finite_gamma_extra_variance():
    # with no downward hops the top stage is a plain Exp(Gamma) wait
    absorbing = first_passage_moments(ChainSpec(6, 1.3, 0.0, boundary="absorbing"))
    for gamma in (0.1, 1.0, 10.0):
        leaky = first_passage_moments(ChainSpec(6, 1.3, 0.0, Gamma=gamma, boundary="leaky"))
        assert leaky.t_tick - absorbing.t_tick == pytest.approx(1 / gamma, rel=1e-12)
        assert leaky.variance - absorbing.variance == pytest.approx(1 / gamma**2, rel=1e-10)
    # with downward hops the extra spread is still positive and fades as Gamma grows
    gaps = [
        first_passage_moments(ChainSpec(10, 2.0, 1.0, Gamma=g, boundary="leaky")).variance
        - first_passage_moments(ChainSpec(10, 2.0, 1.0, boundary="absorbing")).variance
        for g in (1.0, 10.0, 100.0)
    ]
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_non_operational():
    with pytest.raises(NonOperational):
        first_passage_moments(ChainSpec(5, 0.0, 1.0, boundary="absorbing"))
    with pytest.raises(NonOperational):
        first_passage_moments(ChainSpec(5, 1.0, 1.0, Gamma=0.0, boundary="leaky"))
    with pytest.raises(NonOperational):
        drift_diffusion_stats(ChainSpec(5, 1.0, 1.0))


@settings(max_examples=100, deadline=None)
@given(specs(), st.floats(1e-3, 1e3))
def test_time_rescaling(spec, c):
    a = first_passage_moments(spec)
    b = first_passage_moments(spec.scaled(c))
    assert b.t_tick == pytest.approx(a.t_tick / c, rel=1e-9)
    assert b.N == pytest.approx(a.N, rel=1e-9)


def test_drift_diffusion_formulas():
    s = drift_diffusion_stats(ChainSpec(12, 3.0, 0.0))
    assert (s.N, s.t_tick) == (12.0, 4.0)
    s = drift_diffusion_stats(ChainSpec(100, 2.0, 1.0))
    assert (s.mu_rate, s.var_rate, s.nu_tick) == (1.0, 3.0, 0.01)
    assert s.N == pytest.approx(100 / 3, rel=1e-15)
    assert s.dt_tick == pytest.approx(math.sqrt(100) * math.sqrt(3), rel=1e-15)
    exact = first_passage_moments(ChainSpec(100, 2.0, 1.0, boundary="absorbing"))
    assert exact.N == pytest.approx(s.N, rel=0.03)


def test_drift_diffusion_equals_closed_form_for_engine_rates():
    for p in (model.ClockParams(), model.ClockParams(d=37, E_c=2.3, T_h=50.0)):
        s = drift_diffusion_stats(ChainSpec.from_params(p))
        assert s.N == pytest.approx(model.analytic_accuracy(p), rel=1e-12)


@pytest.mark.parametrize("boundary", ["absorbing", "leaky"])
@pytest.mark.parametrize("ratio", [1.5, 2.0, 5.0, 10.0])
def test_drift_diffusion_convergence(ratio, boundary):
    gaps = []
    for d in (10, 30, 100, 300):
        spec = ChainSpec(d, ratio, 1.0, Gamma=1.0, boundary=boundary)
        exact = first_passage_moments(spec).N
        gaps.append(abs(exact - drift_diffusion_stats(spec).N) / exact)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_evolve_pure_drift():
    spec = ChainSpec(200, 1.0, 0.0, Gamma=0.0, boundary="leaky")
    q0 = np.zeros(200)
    q0[0] = 1.0
    tr = classical_evolve(spec, q0, 50.0, num=51)
    mean = tr.q @ np.arange(200)
    np.testing.assert_allclose(mean, tr.t, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(tr.survival, 1.0, atol=1e-12)


def test_evolve_variance_rate():
    spec = ChainSpec(30, 2.0, 1.0, Gamma=0.0, boundary="leaky")
    q0 = np.zeros(30)
    q0[8] = 1.0  # clear of both ends for the fitted window
    tr = classical_evolve(spec, q0, 6.0, num=61)
    n = np.arange(30)
    var = tr.q @ n**2 - (tr.q @ n) ** 2
    slope = np.polyfit(tr.t, var, 1)[0]
    assert slope == pytest.approx(3.0, rel=0.02)


def test_survival_integral_is_mean():
    spec = ChainSpec(10, 2.0, 1.0, Gamma=0.5, boundary="leaky")
    stats = first_passage_moments(spec)
    q0 = np.zeros(10)
    q0[0] = 1.0
    tr = classical_evolve(spec, q0, 40 * stats.t_tick, num=20001)
    assert np.all(np.diff(tr.survival) <= 1e-15)
    assert np.all(tr.density >= 0)
    assert simpson(tr.survival, x=tr.t) == pytest.approx(stats.t_tick, rel=1e-8)
    assert simpson(tr.density, x=tr.t) == pytest.approx(1.0, rel=1e-8)


def test_evolve_rejects_bad_q0():
    with pytest.raises(ValueError):
        classical_evolve(ChainSpec(3, 1.0, 1.0), [0.5, 0.2, 0.2], 1.0)
