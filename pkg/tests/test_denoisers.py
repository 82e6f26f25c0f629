import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amp_evolve.denoisers import (
    ControlledBound,
    Denoiser,
    Schedule,
    as_schedule,
    bg_posterior_mean,
    builtin,
    check_controlled_bound,
    deriv_vec,
    eval_vec,
    finite_difference_error,
    from_config,
    soft,
)
from amp_evolve.distributions import Gaussian, sample
from amp_evolve.errors import InvalidInput, NumericalFailure, Unsupported

# (name, params, t) for every builtin; cs_* composites are read at t = 1
BUILTINS = [
    ("identity", {}, 0),
    ("residual", {}, 0),
    ("add", {}, 0),
    ("linear", {"a": -2.5}, 0),
    ("constant_signal", {}, 0),
    ("tanh", {}, 0),
    ("soft_threshold", {"theta": 1.0}, 0),
    ("bg_posterior_mean", {"eps": 0.1, "var": 1.0, "tau_sq": 0.3}, 0),
    ("cs_soft_threshold_f", {"theta": [0.5, 0.7]}, 1),
    ("cs_bg_f", {"eps": 0.1, "var": 1.0, "tau_sq": [0.3, 0.2]}, 1),
]
IDS = [b[0] for b in BUILTINS]
NINE = Gaussian(0.0, 9.0)


def test_eval_examples():
    assert eval_vec(builtin("identity"), 0, [1.0, 2.0], [7.0, -3.0]).tolist() == [1.0, 2.0]
    assert eval_vec(builtin("residual"), 0, [3.0, 3.0], [1.0, 2.0]).tolist() == [2.0, 1.0]
    st_ = builtin("soft_threshold", {"theta": 1.0})
    assert eval_vec(st_, 0, [2.0, 0.5, -3.0], None).tolist() == [1.0, 0.0, -2.0]


def test_deriv_examples():
    st_ = builtin("soft_threshold", {"theta": 1.0})
    assert deriv_vec(st_, 0, [2.0, 0.5], None).tolist() == [1.0, 0.0]
    # kink convention: derivative at |x| = theta is 0
    assert deriv_vec(st_, 0, [1.0, -1.0], None).tolist() == [0.0, 0.0]
    lin = builtin("linear", {"a": 2.0})
    assert np.all(deriv_vec(lin, 0, [-5.0, 0.0, 9.0], None) == 2.0)
    assert eval_vec(lin, 0, [3.0], None).tolist() == [6.0]


def test_bg_posterior_derivative_at_zero():
    d = bg_posterior_mean(0.1, 1.0, 0.25)
    h = 1e-6
    fd = (eval_vec(d, 0, [h], None)[0] - eval_vec(d, 0, [-h], None)[0]) / (2 * h)
    assert deriv_vec(d, 0, [0.0], None)[0] == pytest.approx(fd, abs=1e-5)


def test_bg_posterior_pure_gaussian_limit():
    s2, tau2 = 2.0, 0.5
    d = bg_posterior_mean(1.0, s2, tau2)
    u = np.linspace(-4, 4, 9)
    assert np.allclose(eval_vec(d, 0, u, None), s2 / (s2 + tau2) * u, rtol=1e-14)


def test_bg_posterior_against_direct_bayes():
    eps, s2, tau2 = 0.2, 1.5, 0.4
    d = bg_posterior_mean(eps, s2, tau2)
    u = np.array([-3.0, -0.4, 0.0, 0.9, 5.0])

    def npdf(x, v):
        return np.exp(-x * x / (2 * v)) / np.sqrt(2 * np.pi * v)

    slab = eps * npdf(u, s2 + tau2)
    spike = (1 - eps) * npdf(u, tau2)
    expected = slab / (slab + spike) * s2 / (s2 + tau2) * u
    assert np.allclose(eval_vec(d, 0, u, None), expected, rtol=1e-12)


def test_bg_posterior_no_overflow():
    d = bg_posterior_mean(0.01, 1.0, 1e-6)
    out = eval_vec(d, 0, [-200.0, 200.0, 1e3], None)
    assert np.all(np.isfinite(out))
    assert out[1] == pytest.approx(200.0 / (1 + 1e-6), rel=1e-12)


def test_cs_composite_example():
    d = builtin("cs_soft_threshold_f", {"theta": [1.0]})
    assert eval_vec(d, 1, [0.0], [2.0]).tolist() == [-1.0]


def test_length_mismatch_and_non_finite():
    with pytest.raises(InvalidInput):
        eval_vec(builtin("identity"), 0, [1.0, 2.0], [1.0])
    blow = Denoiser("exp_sq", lambda t, u, s: np.exp(u * u), lambda t, u, s: 2 * u * np.exp(u * u))
    with pytest.raises(NumericalFailure), np.errstate(over="ignore"):
        eval_vec(blow, 0, [100.0], None)
    with pytest.raises(NumericalFailure), np.errstate(over="ignore"):
        deriv_vec(blow, 0, [100.0], None)


def test_unknown_builtin():
    with pytest.raises(Unsupported):
        builtin("relu")
    with pytest.raises(InvalidInput):
        builtin("linear", {"a": 1.0, "b": 2.0})
    with pytest.raises(InvalidInput):
        builtin("linear")


def test_controlled_bound_parameters():
    with pytest.raises(InvalidInput):
        ControlledBound(1.0, 1.0, 2.0)
    with pytest.raises(InvalidInput):
        ControlledBound(0.0, 1.0, 1.0)


def test_bound_examples():
    samplers = (NINE, NINE)
    assert check_controlled_bound(builtin("identity"), samplers, 10_000, 0, bound=ControlledBound(1, 1, 1)).passed
    assert check_controlled_bound(
        builtin("soft_threshold", {"theta": 1.0}), samplers, 10_000, 0, bound=ControlledBound(1, 1, 1)
    ).passed


def test_bound_detects_super_exponential_growth():
    # exp(u^2) beats c1 exp(c2 |u|^lam) for any lam < 2 once |u| is large
    d = Denoiser("exp_sq", lambda t, u, s: np.exp(u * u), lambda t, u, s: 2 * u * np.exp(u * u),
                 ControlledBound(2.0, 1.0, 1.5))
    with np.errstate(over="ignore"):
        res = check_controlled_bound(d, (NINE, NINE), 10_000, 1)
    assert not res.passed
    u, s = res.worst_point
    # brute-force confirmation at the reported point
    assert u * u > math.log(2.0) + abs(u) ** 1.5 + abs(s) ** 1.5
    # and a grid search finds violations from |u| = 4 on at s = 0
    grid = np.linspace(4.0, 20.0, 200)
    assert np.all(grid**2 > math.log(2.0) + grid**1.5)


@pytest.mark.parametrize("name, params, t", BUILTINS, ids=IDS)
def test_builtin_bound_certificates(name, params, t):
    res = check_controlled_bound(builtin(name, params), (NINE, NINE), 10_000, 42, t=t)
    assert res.passed, res


@pytest.mark.parametrize("name, params, t", BUILTINS, ids=IDS)
def test_builtin_derivatives_match_finite_differences(name, params, t):
    d = builtin(name, params)
    u = sample(NINE, 1000, 5)
    s = sample(NINE, 1000, 6)
    assert finite_difference_error(d, t, u, s, step=1e-6, clearance=1e-4) <= 1e-5


@pytest.mark.parametrize("name, params, t", BUILTINS, ids=IDS)
def test_builtin_config_round_trip(name, params, t):
    d = builtin(name, params)
    again = from_config(d.to_config())
    u = sample(NINE, 50, 1)
    s = sample(NINE, 50, 2)
    assert np.array_equal(eval_vec(d, t, u, s), eval_vec(again, t, u, s))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31), st.sampled_from(BUILTINS))
def test_entrywise_permutation(n, seed, spec):
    name, params, t = spec
    d = builtin(name, params)
    g = np.random.default_rng(seed)
    u, s = 3 * g.standard_normal(n), 3 * g.standard_normal(n)
    perm = g.permutation(n)
    assert np.array_equal(eval_vec(d, t, u, s)[perm], eval_vec(d, t, u[perm], s[perm]))
    assert np.array_equal(deriv_vec(d, t, u, s)[perm], deriv_vec(d, t, u[perm], s[perm]))


def test_schedules():
    assert Schedule.constant(0.3).at(17) == 0.3
    assert Schedule.geometric(1.0, 0.5).at(3) == 0.125
    assert Schedule([1.0, 2.0]).at(1) == 2.0
    with pytest.raises(InvalidInput):
        Schedule([1.0]).at(1)
    for sch in (Schedule.constant(1.0), Schedule.geometric(2.0, 0.9), Schedule([0.1, 0.2])):
        assert as_schedule(sch.to_config()) == sch


def test_soft_infinite_threshold():
    assert np.all(soft(np.array([1e9, -3.0]), math.inf) == 0.0)
