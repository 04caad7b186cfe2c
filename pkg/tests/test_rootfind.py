import math

import numpy as np
import pytest

from scendens.rootfind import (
    BracketError,
    NoConvergenceError,
    RootConfig,
    chandrupatla,
)

# Phi^-1(0.975) computed with mpmath: sqrt(2)*erfinv(0.95) at 30 digits.
PHI_INV_0975 = 1.9599639845400542


def phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class CountingFn:
    def __init__(self, f, lo, hi):
        self.f = f
        self.lo = lo
        self.hi = hi
        self.calls = 0

    def __call__(self, x):
        assert self.lo <= x <= self.hi, "evaluated outside the bracket"
        self.calls += 1
        return self.f(x)


def test_sqrt_two():
    root = chandrupatla(lambda x: x * x - 2.0, 0.0, 2.0)
    assert root == pytest.approx(math.sqrt(2.0), abs=1e-10)


def test_odd_function_zero():
    cfg = RootConfig(x_tol=1e-10, f_tol=1e-15)
    root = chandrupatla(lambda x: x, -1.0, 1.0, cfg)
    assert abs(root) <= 1e-10


def test_normal_quantile():
    root = chandrupatla(lambda x: phi(x) - 0.975, -8.0, 8.0)
    assert root == pytest.approx(PHI_INV_0975, abs=1e-6)


def test_no_sign_change_raises():
    with pytest.raises(BracketError):
        chandrupatla(lambda x: x * x + 1.0, -1.0, 1.0)


def test_endpoint_root_accepted():
    assert chandrupatla(lambda x: x, 0.0, 1.0) == 0.0


def test_max_iter_signals_with_best_estimate():
    cfg = RootConfig(x_tol=1e-14, f_tol=1e-300, max_iter=3)
    with pytest.raises(NoConvergenceError) as err:
        chandrupatla(lambda x: math.tanh(50.0 * (x - 0.123456789)), -1.0, 1.0, cfg)
    assert -1.0 <= err.value.best <= 1.0


@pytest.mark.parametrize("seed", range(30))
def test_monotone_functions_converge_inside_bracket(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.1, 3.0, size=2)
    shift = rng.uniform(-2.0, 2.0)
    f = CountingFn(lambda x: a * (x - shift) ** 3 + b * (x - shift), -6.0, 6.0)
    cfg = RootConfig(x_tol=1e-12, f_tol=1e-12, max_iter=100)
    root = chandrupatla(f, -6.0, 6.0, cfg)
    assert abs(f.f(root)) <= 1e-12 or abs(root - shift) <= 1e-9


def test_iteration_budget_on_smooth_cdf_workload():
    # Chandrupatla should not be slower than bisection plus small overhead.
    cfg = RootConfig(x_tol=1e-12, f_tol=1e-300, max_iter=100)
    budget = math.ceil(math.log2(16.0 / cfg.x_tol)) + 10
    for u in np.linspace(0.001, 0.999, 100):
        f = CountingFn(lambda x, u=u: phi(x) - u, -8.0, 8.0)
        chandrupatla(f, -8.0, 8.0, cfg)
        assert f.calls <= budget


def test_config_validation():
    with pytest.raises(ValueError):
        RootConfig(x_tol=-1.0)
    with pytest.raises(ValueError):
        RootConfig(max_iter=0)
