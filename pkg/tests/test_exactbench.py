import math
import time

import numpy as np
import pytest
from scipy import integrate

from rqab import exactbench as X
from rqab import rqcore as Q
from rqab.exceptions import InapplicableError

LN2 = math.log(2.0)


def naive_exact(lam, mu, alpha, upper):
    """Direct quadrature of the M/M/1+M formula on a fixed domain (moderate parameters only)."""
    rho = lam / mu

    def e(x):
        return math.exp(mu * (rho * (1 - math.exp(-alpha * x)) / alpha - x))

    num = integrate.quad(lambda x: x * e(x), 0, upper, limit=400, epsabs=0, epsrel=1e-12)[0]
    den = integrate.quad(e, 0, upper, limit=400, epsabs=0, epsrel=1e-12)[0]
    return num / (1 / lam + den)


def test_exact_no_abandonment_and_tolerance_halving():
    m = Q.make_model(0.5, 1.0, alpha=1e-12)
    t0 = time.perf_counter()
    v = X.exact_mm1_gi(m)
    assert time.perf_counter() - t0 < 1.0
    assert v == pytest.approx(1.0, rel=0.005)
    assert abs(X.exact_mm1_gi(m, epsrel=5e-11) / v - 1) < 1e-6


@pytest.mark.parametrize("lam,alpha", [(0.9, 0.125), (1.0, 1.0), (1.3, 0.25), (0.5, 2.0)])
def test_exact_against_direct_quadrature(lam, alpha):
    m = Q.make_model(lam, alpha=alpha)
    assert X.exact_mm1_gi(m) == pytest.approx(naive_exact(lam, 1.0, alpha, 400.0), rel=1e-8)


def test_exact_overload_limit():
    a = 2.0**-13
    assert a * X.exact_mm1_gi(Q.make_model(2.0, alpha=a)) == pytest.approx(LN2, rel=0.02)


def test_exact_nonincreasing_in_alpha():
    vals = [X.exact_mm1_gi(Q.make_model(0.9, alpha=a)) for a in (1 / 64, 1 / 16, 1 / 4, 1.0, 4.0)]
    assert np.all(np.diff(vals) <= 0)


def test_exact_rejects_non_markov():
    with pytest.raises(InapplicableError, match="Poisson"):
        X.exact_mm1_gi(Q.make_model(1.0, alpha=1.0, interarrival="erlang"))
    with pytest.raises(InapplicableError, match="service"):
        X.exact_mm1_gi(Q.make_model(1.0, alpha=1.0, service={"family": "hyperexp2", "scv": 4.0}))


def test_wg_critical_closed_form():
    for a in (1.0, 1 / 16):
        r = X.wg_approx(Q.make_model(1.0, alpha=a))
        assert r.applicable
        assert r.value == pytest.approx(math.sqrt(2 / math.pi) / math.sqrt(a), rel=1e-12)


def test_wg_gate_on_density_at_zero():
    assert X.wg_approx(Q.make_model(1.0, alpha=1.0)).applicable
    r = X.wg_approx(Q.make_model(1.0, alpha=1.0, patience="erlang"))
    assert not r.applicable and "f(0)" in r.note
    assert X.wg_approx(Q.make_model(1.0, alpha=1.0, patience={"family": "hyperexp2", "scv": 4.0})).applicable


def test_wg_close_to_exact_critical():
    m = Q.make_model(1.0, alpha=2.0**-13)
    assert X.wg_approx(m).value == pytest.approx(X.exact_mm1_gi(m), rel=0.05)


def test_wg_stable_far_underloaded():
    r = X.wg_approx(Q.make_model(0.2, alpha=1e-6))
    assert math.isfinite(r.value) and r.value >= 0


def test_hazard_rate_exponential_identity():
    # log Fbar_alpha(u) = -alpha u; exponent (2/cx2)((rho-1)x - alpha x^2/2)
    lam, a = 0.95, 0.05
    m = Q.make_model(lam, alpha=a)

    def e(x):
        return math.exp((lam - 1) * x - a * x * x / 2)

    num = integrate.quad(lambda x: x * e(x), 0, 200)[0]
    den = integrate.quad(e, 0, 200)[0]
    assert X.hazard_rate_approx(m).value == pytest.approx(num / den, rel=1e-8)


def test_hazard_rate_near_critical():
    m = Q.make_model(1.0, alpha=2.0**-13)
    assert X.hazard_rate_approx(m).value == pytest.approx(X.exact_mm1_gi(m), rel=0.05)


def test_hazard_rate_applies_to_erlang_patience():
    r = X.hazard_rate_approx(Q.make_model(1.0, alpha=1 / 8, patience="erlang"))
    assert r.applicable and r.value > 0


def test_hg_overload_and_poisson_equivalence():
    m = Q.make_model(2.0, alpha=2.0**-6)
    h = X.hg_approx(m)
    assert h.value == pytest.approx(X.exact_mm1_gi(m), rel=0.10)
    assert X.hg_approx(m, True).value == h.value


def test_hg_differs_from_exact_generic():
    m = Q.make_model(0.7, alpha=0.5)
    assert abs(X.hg_approx(m).value - X.exact_mm1_gi(m)) > 1e-4


def test_hg_modified_uses_arrival_scv():
    m = Q.make_model(1.0, alpha=1 / 8, interarrival={"family": "hyperexp2", "scv": 4.0})
    assert X.hg_approx(m, True).value > X.hg_approx(m, False).value


def test_all_benchmarks_nonnegative_on_grid():
    for lam in (0.75, 0.9, 1.0, 1.1, 1.25, 2.0):
        for a in (1.0, 1 / 8, 1 / 32, 1 / 128, 1 / 1024):
            for r in X.all_benchmarks(Q.make_model(lam, alpha=a)):
                assert r.applicable and math.isfinite(r.value) and r.value >= 0, r
