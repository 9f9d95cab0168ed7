import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from supermarket.core_math import ModelParams
from supermarket.ctmc import RngSpec, SteadyEstimate, steady_state_sample
from supermarket.steady import (
    CSV_FIELDS,
    expectation_lower_bound,
    figure1_experiment,
    figure1_level,
    heuristic_limit,
    mean_field_profile,
    short_queue_vanishing,
    verify_bound,
)


def test_lower_bound_examples():
    assert expectation_lower_bound(0.9, 2, 0) == 1
    assert expectation_lower_bound(0.98, 2, 3) == pytest.approx(0.86, abs=1e-14)
    assert expectation_lower_bound(0.7, 3, 1) == pytest.approx(0.7, abs=1e-15)
    assert expectation_lower_bound(0.9, 2, 8) < 0


@given(st.fractions(0, 1), st.integers(2, 6), st.integers(0, 30))
def test_lower_bound_telescopes_exactly(lam, d, i):
    lam = Fraction(lam)
    step_ = expectation_lower_bound(lam, d, i + 1) - expectation_lower_bound(lam, d, i)
    assert step_ == -(1 - lam) * d**i


def test_heuristic_examples():
    assert heuristic_limit(2, 2, 0) == pytest.approx(0.13534, abs=1e-5)
    assert heuristic_limit(2, 2, 1) == pytest.approx(0.01832, abs=1e-5)
    assert heuristic_limit(2, 2, -40) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        heuristic_limit(0, 2, 0)


@given(st.floats(0.1, 5), st.integers(2, 5), st.integers(-5, 3))
def test_heuristic_monotone(beta, d, k):
    assert heuristic_limit(beta, d, k + 1) < heuristic_limit(beta, d, k)
    assert heuristic_limit(beta * 1.1, d, k) < heuristic_limit(beta, d, k)


def test_mean_field_profile():
    prof = mean_field_profile(0.5, 2, 4)
    assert prof == [1.0, 0.5, 0.5**3, 0.5**7]


def _est(level, mean, se, p):
    return SteadyEstimate(level, mean, se, 20, p.n, p.d, p.lam)


def test_verify_bound_trivial_rows():
    p = ModelParams.from_lambda(n=10, lam=0.9)
    ests = [_est(0, 1.0, 0.0, p), _est(1, 0.5, 0.01, p), _est(9, 0.0, 0.0, p)]
    rows = verify_bound(p, [0, 1, 9], ests)
    assert rows[0].passed and rows[0].margin == 0 and rows[0].stderr == 0
    assert not rows[1].passed  # 0.5 is far below the bound 0.9
    assert rows[2].passed and rows[2].bound < 0
    assert rows[1].as_csv()["pass"] == "FAIL"
    assert set(rows[0].as_csv()) == set(CSV_FIELDS)


def test_verify_bound_rejects_foreign_estimates():
    p = ModelParams.from_lambda(n=10, lam=0.9)
    q = ModelParams.from_lambda(n=11, lam=0.9)
    with pytest.raises(ValueError):
        verify_bound(p, [1], [_est(1, 0.9, 0.01, q)])


def test_verify_bound_on_simulation():
    p = ModelParams.from_lambda(n=200, lam=0.9)
    est = steady_state_sample(p, batches=20, batch_len=100, levels=8, rng=RngSpec(21))
    rows = verify_bound(p, range(1, 9), est)
    assert all(r.passed for r in rows)


def test_load_monotonicity():
    n, levels = 20, 5
    means = []
    for lam in (0.6, 0.75, 0.9):
        p = ModelParams.from_lambda(n=n, lam=lam)
        means.append(steady_state_sample(p, batches=20, batch_len=200, levels=levels, rng=RngSpec(3)))
    for lo, hi in zip(means, means[1:]):
        for i in range(1, levels + 1):
            se = math.hypot(lo[i].stderr, hi[i].stderr)
            assert hi[i].mean - lo[i].mean >= -2 * se


def test_figure1_level_rounding():
    assert figure1_level(2**10, 0.75, 2, 0) == 8  # 7.5 rounds up
    assert figure1_level(2**11, 0.75, 2, 0) == 8  # 8.25
    assert figure1_level(2**12, 0.75, 2, 1) == 10
    assert figure1_level(2**14, 0.75, 2, 0) == 11  # 10.5 rounds up


def test_figure1_rejects_bad_configs():
    with pytest.raises(ValueError):
        figure1_experiment(n_list=[2**8, 2**6])
    with pytest.raises(ValueError):
        figure1_experiment(beta=40.0, n_list=[2**6])


def test_figure1_empty():
    assert figure1_experiment(n_list=[2**6], k_list=[]) == []


def test_figure1_extreme_k():
    rows = figure1_experiment(
        n_list=[2**6, 2**7], k_list=[-4, 6], burn_in_factor=5, sample_factor=20, batches=10
    )
    assert [r.k for r in rows] == [-4, 6, -4, 6]
    for r in rows:
        if r.k == 6:
            assert r.mean < 1e-3 and r.heuristic < 1e-50
        else:
            assert r.mean > 0.85 and r.heuristic > 0.85
        assert r.heuristic == heuristic_limit(2.0, 2, r.k)


def test_figure1_serial_matches_parallel():
    kw = dict(n_list=[2**6, 2**7], k_list=[0], burn_in_factor=2, sample_factor=5, batches=5)
    assert figure1_experiment(workers=1, **kw) == figure1_experiment(workers=2, **kw)


def test_short_queue_report():
    p = ModelParams(n=4096, eta=64.0)
    ests = [_est(i, 1.0 - 0.01 * i, 0.001, p) for i in range(8)]
    rep = short_queue_vanishing(p, 3.0, ests)
    assert rep.level == 3
    assert rep.threshold == pytest.approx(0.75)
    assert rep.passed
    edge = short_queue_vanishing(p, 0.0, ests)
    assert edge.level == 6 and edge.passed is None
    big = short_queue_vanishing(p, 5.5, ests)
    assert big.level == 0 and big.threshold > 0.95
    with pytest.raises(ValueError):
        short_queue_vanishing(p, -3.0, ests)
