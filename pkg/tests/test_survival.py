import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conftest import grid_cdf, ks_stat
from quantjoint._jit import python_version_of
from quantjoint.model import HazardGrid
from quantjoint.survival import (
    build_pieces,
    cumulative_hazard,
    explin_draw,
    explin_eval,
    explin_integral,
    explin_logf,
    interval_of,
    lambda_conditional,
    log_survival_likelihood,
    moment_integrals,
    update_beta_s,
    update_lambda,
)


def mp_moment(n, z):
    return float(mpmath.quad(lambda v: v ** n * mpmath.exp(z * v), [0, 1]))


@pytest.mark.parametrize("z", [-30.0, -3.0, -0.1000001, -0.0999999, -1e-6, 0.0, 1e-9, 0.05, 0.0999999, 0.1, 2.0, 25.0])
def test_moment_integrals_against_mpmath(z):
    got = moment_integrals(z)
    for n in range(3):
        assert got[n] == pytest.approx(mp_moment(n, z), rel=1e-13, abs=1e-300)


def test_moment_integrals_frozen():
    j0, j1, j2 = moment_integrals(1.0)
    assert j0 == pytest.approx(math.e - 1.0, rel=1e-15)
    assert j1 == pytest.approx(1.0, rel=1e-15)
    assert j2 == pytest.approx(math.e - 2.0, rel=1e-14)


def test_explin_integral_limits():
    assert explin_integral(0.0, 1.0, 3.5) == 2.5
    assert explin_integral(1e-12, 0.0, 2.0) == pytest.approx(2.0 + 2e-12, rel=1e-15)
    assert explin_integral(0.7, 2.0, 2.0) == 0.0
    assert explin_integral(0.7, 1.0, 2.0) == pytest.approx((math.exp(1.4) - math.exp(0.7)) / 0.7, rel=1e-15)


TERMS = np.array([
    [0.3, 0.5, 0.0, 0.0, 0.0, 1.0],
    [0.2, 0.0, 0.8, 0.1, 1.0, 2.5],
    [0.1, -0.4, 0.6, 0.0, 2.5, 4.0],
])


def _f_direct(x, quad, lin, terms):
    f = -0.5 * quad * x * x + lin * x
    for c, p, q, r, a, b in terms:
        f -= c * integrate.quad(lambda u: math.exp(p * x + (q * x + r) * u), a, b, epsabs=0, epsrel=1e-13)[0]
    return f


@pytest.mark.parametrize("x", [-2.0, -0.3, 0.0, 0.7, 1.9])
def test_explin_eval_value_and_derivatives(x):
    f, df, d2 = explin_eval(x, 0.5, 1.2, TERMS)
    assert f == pytest.approx(_f_direct(x, 0.5, 1.2, TERMS), rel=1e-11)
    h = 1e-5
    fp = explin_eval(x + h, 0.5, 1.2, TERMS)
    fm = explin_eval(x - h, 0.5, 1.2, TERMS)
    assert df == pytest.approx((fp[0] - fm[0]) / (2 * h), rel=1e-7, abs=1e-7)
    assert d2 == pytest.approx((fp[1] - fm[1]) / (2 * h), rel=1e-7, abs=1e-7)
    assert d2 < 0
    lf, ldf = explin_logf(x, (0.5, 1.2, TERMS))
    assert lf == pytest.approx(f, rel=1e-14)
    assert ldf == pytest.approx(df, rel=1e-13)


def test_explin_eval_compiled_matches_python():
    py = python_version_of(explin_eval)
    for x in np.linspace(-3, 3, 13):
        np.testing.assert_allclose(explin_eval(x, 0.5, 1.2, TERMS), py(x, 0.5, 1.2, TERMS), rtol=1e-13)


@pytest.mark.parametrize("quad,lin", [(0.1, 0.0), (1.0, 3.0), (4.0, -2.0)])
def test_explin_draw_exact(rng, quad, lin):
    draws = np.empty(20000)
    x = 0.0
    for i in range(draws.shape[0]):
        x, st, _ = explin_draw(x, quad, lin, TERMS, rng, 1e-8)
        assert st == 0
        draws[i] = x
    cdf = grid_cdf(lambda v: explin_eval(v, quad, lin, TERMS)[0], draws.min() - 1, draws.max() + 1)
    assert ks_stat(draws, cdf) < 0.015


def test_explin_draw_far_start(rng):
    x, st, _ = explin_draw(250.0, 1.0, 0.0, TERMS[:1], rng, 1e-8)
    assert st == 0 and abs(x) < 10


def test_interval_of():
    cuts = np.array([0.0, 1.0, 2.0, 5.0])
    assert interval_of(cuts, 0.5) == 0
    assert interval_of(cuts, 1.0) == 0  # right-closed
    assert interval_of(cuts, 1.0000001) == 1
    assert interval_of(cuts, 5.0) == 2


def test_build_pieces_left_truncation():
    cuts = np.array([0.0, 1.0, 2.0, 5.0])
    p = build_pieces(cuts, [0.5, 0.0], [3.0, 1.0], [True, False])
    np.testing.assert_array_equal(p.start, [0, 3, 4])
    np.testing.assert_array_equal(p.k, [0, 1, 2, 0])
    np.testing.assert_allclose(p.a, [0.5, 1.0, 2.0, 0.0])
    np.testing.assert_allclose(p.b, [1.0, 2.0, 3.0, 1.0])
    np.testing.assert_array_equal(p.event_k, [2, -1])


def test_build_pieces_outside_grid():
    with pytest.raises(ValueError):
        build_pieces(np.array([0.0, 1.0]), [0.0], [1.5], [True])


def test_cumulative_hazard_frozen():
    grid = HazardGrid([0.0, 8.0], [0.1])
    assert cumulative_hazard(0.0, 5.0, grid, 0.0, 0.0, 0.0) == pytest.approx(0.5, rel=1e-15)
    # 0.1 * exp(-0.5) * (1 - exp(-0.5)) / 0.1
    assert cumulative_hazard(0.0, 5.0, grid, -0.5, 1.0, 0.2) == pytest.approx(0.23865121854119112, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(
    alpha=st.floats(-2, 2), g0=st.floats(-2, 2), g1=st.floats(-1, 1), eta=st.floats(-1, 1),
    entry=st.floats(0, 3), span=st.floats(0.01, 4),
)
def test_cumulative_hazard_matches_quadrature(alpha, g0, g1, eta, entry, span):
    grid = HazardGrid([0.0, 1.0, 2.5, 4.0, 7.5], [0.2, 0.05, 0.4, 0.1])
    exit_ = entry + span
    got = cumulative_hazard(entry, exit_, grid, alpha, g0, g1, eta)
    hz = lambda u: grid.values[interval_of(grid.cuts, u)] * math.exp(alpha * (g0 + g1 * u) + eta)
    ref = integrate.quad(hz, entry, exit_, points=[1.0, 2.5, 4.0], epsabs=0, epsrel=1e-12, limit=200)[0]
    assert got == pytest.approx(ref, rel=1e-9)


def test_log_survival_likelihood_manual():
    grid = HazardGrid([0.0, 2.0, 6.0], [0.1, 0.3])
    alpha, g0, g1 = 0.4, -0.5, 0.2
    ll = log_survival_likelihood(1.0, 3.0, True, grid, alpha, g0, g1, 0.1)
    haz = math.log(0.3) + alpha * (g0 + g1 * 3.0) + 0.1
    assert ll == pytest.approx(haz - cumulative_hazard(1.0, 3.0, grid, alpha, g0, g1, 0.1), rel=1e-14)
    assert log_survival_likelihood(1.0, 3.0, False, grid, alpha, g0, g1, 0.1) == pytest.approx(
        -cumulative_hazard(1.0, 3.0, grid, alpha, g0, g1, 0.1), rel=1e-14)


def test_lambda_conditional_counts():
    cuts = np.array([0.0, 1.0, 3.0])
    p = build_pieces(cuts, [0.0, 0.0, 0.5], [0.5, 2.0, 3.0], [True, True, False])
    shape, rate = lambda_conditional(p, 2, 0.0, np.zeros((3, 2)), np.zeros(3), (0.01, 0.02))
    np.testing.assert_allclose(shape, [1.01, 1.01])
    np.testing.assert_allclose(rate, [0.02 + 0.5 + 1.0 + 0.5, 0.02 + 1.0 + 2.0])


def test_update_lambda_moments(rng):
    cuts = np.array([0.0, 1.0, 3.0])
    p = build_pieces(cuts, [0.0, 0.0], [0.5, 2.0], [True, True])
    draws = np.array([update_lambda(p, 2, 0.3, np.ones((2, 2)), np.zeros(2), (2.0, 1.0), rng) for _ in range(20000)])
    shape, rate = lambda_conditional(p, 2, 0.3, np.ones((2, 2)), np.zeros(2), (2.0, 1.0))
    np.testing.assert_allclose(draws.mean(0), shape / rate, rtol=0.02)


def test_update_beta_s_single_coefficient(rng):
    cuts = np.array([0.0, 2.0, 5.0])
    entry = np.zeros(4)
    exit_ = np.array([1.0, 3.0, 4.5, 5.0])
    event = np.array([True, True, False, False])
    x = np.array([[1.0], [0.0], [1.0], [-0.5]])
    p = build_pieces(cuts, entry, exit_, event)
    lam = np.array([0.2, 0.5])
    gamma = np.array([[0.1, 0.0], [0.0, 0.1], [-0.2, 0.05], [0.3, 0.0]])
    alpha = 0.5

    def logf(b):
        eta = x[:, 0] * b
        ll = -0.5 * b * b / 4.0
        for i in range(4):
            ll += log_survival_likelihood(0.0, exit_[i], event[i], HazardGrid(cuts, lam), alpha, *gamma[i], eta[i])
        return ll

    draws = np.empty(8000)
    b = np.zeros(1)
    for i in range(draws.shape[0]):
        b = update_beta_s(b, x, np.zeros(1), np.array([[4.0]]), event, p, lam, alpha, gamma, rng)
        draws[i] = b[0]
    assert ks_stat(draws, grid_cdf(logf, -8, 8, 4001)) < 0.02
