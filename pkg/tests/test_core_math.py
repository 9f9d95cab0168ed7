import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supermarket.core_math import (
    INFINITY,
    ModelParams,
    fixed_point,
    g_derivative,
    g_eval,
    g_eval_binomial,
    g_lipschitz_bound,
    istar,
    lyapunov_phi,
    lyapunov_rate,
    parse_eta,
    rho_norm,
    rho_norm_path,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# --- ModelParams ---------------------------------------------------------------


def test_lambda_derived_from_beta_and_eta():
    p = ModelParams(n=100, beta=2.0, eta=10.0)
    assert p.lam == pytest.approx(0.8)
    assert p.rho == 3.0


def test_infinite_eta_gives_unit_lambda():
    p = ModelParams(n=5, eta=INFINITY)
    assert p.lam == 1.0
    assert math.isinf(p.eta_float)
    assert not p.admissible


@pytest.mark.parametrize(
    "kw",
    [
        dict(n=0, eta=5.0),
        dict(n=10, d=1, eta=5.0),
        dict(n=10, eta=0.5),
        dict(n=10, beta=6.0, eta=5.0),
        dict(n=10, eta=5.0, alpha=0.5),
        dict(n=10, eta=5.0, rho=1.0),
        dict(n=10, eta=5.0, lam=1.5),
        dict(n=10, beta=-1.0, eta=5.0),
    ],
)
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        ModelParams(**kw)


def test_admissibility_flag():
    assert ModelParams(n=100, eta=10.0).admissible
    assert not ModelParams(n=100, eta=11.0).admissible
    assert ModelParams(n=100, eta=20.0, q_const=2.0).admissible


def test_from_lambda_round_trips():
    p = ModelParams.from_lambda(n=200, lam=0.9, d=2)
    assert p.lam == 0.9
    assert p.eta_float == pytest.approx(10.0)


def test_parse_eta():
    assert parse_eta("inf") is INFINITY
    assert parse_eta("12.5") == 12.5
    with pytest.raises(ValueError):
        parse_eta(float("inf"))


def test_istar_and_threshold():
    p = ModelParams(n=10**4, eta=81.0, alpha=0.25, rho=3.0)
    assert p.istar == pytest.approx(0.125 * 4)
    assert p.threshold == pytest.approx(3.0)
    assert istar(INFINITY, 0.25, 3.0) == math.inf


# --- norms ----------------------------------------------------------------------


def test_rho_norm_examples():
    assert rho_norm([0, 0, 0], 2) == 0
    assert rho_norm([1, 1, 1], 2) == 1.75
    x = [2.0**i for i in range(21)]
    assert rho_norm(x, 4) == pytest.approx(float(sum(Fraction(1, 2**i) for i in range(21))), rel=1e-14)
    assert rho_norm(x, 4) == pytest.approx(1.99999905, abs=1e-8)


def test_rho_norm_rejects_small_rho():
    with pytest.raises(ValueError):
        rho_norm([1.0], 1.0)


def test_rho_norm_tail():
    # constant tail c at every index >= len: c * rho**-len / (1 - 1/rho)
    assert rho_norm([0.0, 0.0], 2.0, tail=1.0) == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=12), st.floats(-5, 5), st.floats(1.01, 10))
def test_rho_norm_homogeneous(x, a, rho):
    assert rho_norm(np.multiply(a, x), rho) == pytest.approx(abs(a) * rho_norm(x, rho), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12).flatmap(lambda k: st.tuples(st.lists(finite, min_size=k, max_size=k), st.lists(finite, min_size=k, max_size=k))), st.floats(1.01, 10))
def test_rho_norm_triangle(xy, rho):
    x, y = map(np.asarray, xy)
    assert rho_norm(x + y, rho) <= rho_norm(x, rho) + rho_norm(y, rho) + 1e-9


def test_rho_norm_path_examples():
    grid = np.linspace(0, 2, 201)
    assert rho_norm_path(np.zeros((3, 201)), 2, t=2, grid=grid) == 0
    assert rho_norm_path(grid[None, :], 2, t=2, grid=grid) == pytest.approx(2.0)
    two = np.vstack([np.ones(201), -3 * np.ones(201)])
    assert rho_norm_path(two, 3, t=2, grid=grid) == pytest.approx(2.0)


def test_rho_norm_path_respects_horizon():
    grid = np.linspace(0, 2, 201)
    assert rho_norm_path(grid[None, :], 2, t=1.0, grid=grid) == pytest.approx(1.0)


def test_rho_norm_path_grid_errors():
    with pytest.raises(ValueError):
        rho_norm_path(np.zeros((2, 5)), 2, grid=np.linspace(0, 1, 4))
    with pytest.raises(ValueError):
        rho_norm_path(np.zeros((2, 5)), 2, t=3.0, grid=np.linspace(0, 1, 5))


# --- correction function ------------------------------------------------------------


def test_g_examples():
    assert g_eval(INFINITY, 3, 7.3) == 0
    assert g_eval(5.0, 3, 0.0) == 0
    assert g_eval_binomial(5.0, 3, 0.0) == 0
    assert g_eval(2.0, 2, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert g_eval_binomial(2.0, 2, 1.0) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("eta", [1.0, 2.0, 10.0, 1e3])
@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_g_closed_forms_agree(eta, d):
    # relative to the size of the terms combined in the closed form, which
    # cancel to O(x**2/eta) near x = 0
    x = np.linspace(-eta - 2, eta + 2, 4001)
    a, b = g_eval(eta, d, x), g_eval_binomial(eta, d, x)
    scale = np.maximum(np.abs(b), eta / d + np.abs(x))
    assert np.all(np.abs(a - b) <= 1e-12 * scale)


def test_g_lipschitz_bound_values():
    assert g_lipschitz_bound(10.0, 2) == 16
    assert g_lipschitz_bound(10.0, 3) == 64
    with pytest.raises(ValueError):
        g_lipschitz_bound(INFINITY, 2)


@pytest.mark.parametrize("eta", [1.0, 2.0, 10.0, 1e3])
@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_g_sampled_lipschitz_ratio(eta, d):
    rng = np.random.default_rng(d * 1000 + int(eta))
    y1, y2 = rng.uniform(-eta - 2, eta + 2, (2, 20000))
    ratio = np.abs(g_eval(eta, d, y1) - g_eval(eta, d, y2)) / np.abs(y1 - y2)
    assert ratio.max() <= g_lipschitz_bound(eta, d)
    # derivative envelope on a dense grid, an independent bound on the same ratio
    x = np.linspace(-eta - 2, eta + 2, 20001)
    assert np.abs(g_derivative(eta, d, x)).max() <= 4**d


@pytest.mark.parametrize("d", [2, 3, 5])
def test_g_vanishes_as_eta_grows(d):
    alpha = 0.25
    vals = []
    for eta in [10.0, 1e2, 1e3, 1e4]:
        x = eta**alpha
        vals.append(abs(g_eval(eta, d, x)))
    assert all(b < a for a, b in zip(vals, vals[1:]))


# --- fixed point and Lyapunov function -------------------------------------------------


def test_fixed_point_examples():
    assert np.all(fixed_point(2, 0.0, 5) == 0)
    assert list(fixed_point(2, 2.0, 3)) == [0, 2, 6, 14]
    assert list(fixed_point(3, 1.0, 2)) == [0, 1, 4]
    with pytest.raises(ValueError):
        fixed_point(2, 1.0, 1)


@given(st.integers(2, 6), st.integers(-20, 20), st.integers(2, 40))
def test_fixed_point_exact_recurrence(d, pi1, L):
    pi = fixed_point(d, pi1, L, exact=True)
    assert pi[0] == 0 and pi[1] == pi1
    for i in range(1, L):
        assert pi[i + 1] == (d + 1) * pi[i] - d * pi[i - 1]
        assert pi[i + 1] == Fraction(pi1 * (d ** (i + 1) - 1), d - 1)


def test_fixed_point_float_matches_exact():
    pi = fixed_point(3, 0.7, 20)
    ex = fixed_point(3, Fraction(7, 10), 20, exact=True)
    assert np.allclose(pi, [float(v) for v in ex], rtol=1e-14, atol=0)


def test_lyapunov_examples():
    pi = fixed_point(4, 1.0, 6)
    assert lyapunov_phi(pi, pi, 4) == 0
    T = pi.copy()
    T[1] += 1
    assert lyapunov_phi(T, pi, 4) == pytest.approx(0.5)
    assert lyapunov_rate(2) == pytest.approx(0.171573, abs=1e-6)
    with pytest.raises(ValueError):
        lyapunov_phi(pi[:-1], pi, 4)
