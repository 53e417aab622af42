import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import digamma_fd
from robustlc.numerics import (Bracket, RootFindingError, digamma, f_cdf, f_quantile,
                               log_gamma, solve_root)


@pytest.mark.parametrize("x, want", [(1.0, 0.0), (2.0, 0.0), (0.5, 0.5723649429247001)])
def test_log_gamma_values(x, want):
    assert log_gamma(x) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_log_gamma_rejects_nonpositive(x):
    with pytest.raises(ValueError):
        log_gamma(x)


def test_digamma_at_one_matches_finite_difference():
    assert digamma(1.0) == pytest.approx(digamma_fd(1.0), abs=1e-8)
    assert digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)


def test_digamma_recurrence():
    assert digamma(2.0) == pytest.approx(digamma(1.0) + 1.0, abs=1e-14)
    assert digamma(2.0) == pytest.approx(1 - 0.5772156649, abs=1e-10)


def test_digamma_large_argument():
    x = 1e6
    assert digamma(x) == pytest.approx(math.log(x) - 0.5 / x - 1 / (12 * x * x), abs=1e-15)


def test_digamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        digamma(-0.5)


@given(st.floats(0.05, 200.0))
@settings(max_examples=60, deadline=None)
def test_digamma_is_derivative_of_log_gamma(x):
    h = 1e-5 * max(1.0, x)
    fd = (log_gamma(x + h) - log_gamma(x - h)) / (2 * h) if x > h else None
    if fd is not None:
        assert digamma(x) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_f_quantile_median_of_equal_dof():
    assert f_quantile(0.5, 7, 7) == pytest.approx(1.0, abs=1e-12)


def test_f_quantile_monte_carlo():
    rng = np.random.default_rng(5)
    q = f_quantile(0.95, 5, 10)
    draws = (rng.chisquare(5, 10**6) / 5) / (rng.chisquare(10, 10**6) / 10)
    assert abs((draws <= q).mean() - 0.95) <= 0.005


def test_f_quantile_inverts_cdf():
    for alpha in (0.01, 0.3, 0.9, 0.999):
        assert f_cdf(f_quantile(alpha, 3, 17), 3, 17) == pytest.approx(alpha, abs=1e-12)


def test_f_quantile_small_alpha_goes_to_zero():
    assert f_quantile(1e-12, 4, 6) < 1e-5
    assert f_quantile(1e-12, 4, 6) < f_quantile(1e-6, 4, 6)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5, -0.1])
def test_f_quantile_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        f_quantile(alpha, 2, 3)


def test_solve_root_examples():
    assert solve_root(lambda x: x - 3, Bracket(0, 10)) == pytest.approx(3.0, abs=1e-12)
    assert solve_root(lambda x: math.exp(x) - 1, Bracket(-2, 2)) == pytest.approx(0.0, abs=1e-12)


def test_solve_root_expands_bracket():
    assert solve_root(lambda x: x - 100.0, Bracket(0, 1)) == pytest.approx(100.0, abs=1e-10)


def test_solve_root_no_sign_change():
    with pytest.raises(RootFindingError):
        solve_root(lambda x: x * x + 1.0, Bracket(-1, 1, max_expand=5))


def test_solve_root_iteration_cap():
    with pytest.raises(RootFindingError):
        solve_root(lambda x: math.atan(x - 0.3), Bracket(-1e6, 1e6, tol=1e-15, max_iter=3))


def test_bracket_validation():
    with pytest.raises(ValueError):
        Bracket(1.0, 1.0)
    with pytest.raises(ValueError):
        Bracket(0.0, 1.0, tol=0)
