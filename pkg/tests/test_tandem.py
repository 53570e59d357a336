import math

import mpmath as mp
import numpy as np
import pytest

from rqab import rqcore as Q
from rqab import sim as S
from rqab import tandem as T
from rqab.exceptions import ParameterError
from rqab.renewal import IdcCurve

H2 = {"family": "hyperexp2", "scv": 4.0}
E2 = {"family": "erlang", "shape": 2}


def wstar_mp(u):
    mp.mp.dps = 60
    u = mp.mpf(u)
    x = mp.sqrt(u)
    return float(((u * u + 2 * u - 1) * (2 * mp.ncdf(x) - 1) + 2 * mp.npdf(x) * x * (1 + u) - u * u) / (2 * u))


@pytest.mark.parametrize("u", [1e-9, 1e-6, 1e-3, 0.05, 0.0999, 0.1, 0.7, 4.0, 50.0, 1e3, 1e7])
def test_wstar_against_high_precision(u):
    assert T.weight_wstar(u) == pytest.approx(wstar_mp(u), rel=1e-12, abs=1e-15)


def test_wstar_limits_and_monotone():
    assert T.weight_wstar(0.0) == 0.0
    assert T.weight_wstar(1e3) > 0.99
    # leading behaviour (4/3) sqrt(2u/pi)
    assert T.weight_wstar(1e-10) == pytest.approx(4 / 3 * math.sqrt(2e-10 / math.pi), rel=1e-4)
    u = np.logspace(-8, 6, 100)
    w = T.weight_wstar(u)
    assert np.all(np.diff(w) >= 0) and np.all((w >= 0) & (w <= 1))
    with pytest.raises(ParameterError):
        T.weight_wstar(-1.0)


def test_departure_idc_of_markov_station_is_poisson():
    spec = T.make_tandem(0.8, "exponential", "exponential")
    d = T.departure_idc(spec)
    assert d.constant == 1.0


def test_departure_idc_equal_inputs():
    spec = T.make_tandem(0.8, "exponential", "exponential")
    c = IdcCurve.constant_curve(2.5, 0.8)
    spec = T.TandemSpec(0.8, 0.8, c, c, spec.queue2)
    np.testing.assert_allclose(T.departure_idc(spec)(np.logspace(-2, 3, 30)), 2.5)


def test_departure_idc_is_convex_combination_and_limits():
    spec = T.make_tandem(0.9, E2, H2)
    t = np.logspace(-3, 5, 60)
    d, a, s = T.departure_idc(spec)(t), spec.arrival_idc1(t), spec.service_idc1(t)
    assert np.all(d >= np.minimum(a, s) - 1e-12) and np.all(d <= np.maximum(a, s) + 1e-12)
    assert T.departure_idc(spec).limit_c2 == pytest.approx(0.5)
    # service-scale at small t, arrival-scale at very large t
    assert abs(d[0] - s[0]) < abs(d[0] - a[0])
    assert T.departure_idc(spec)(1e7) == pytest.approx(0.5, abs=0.01)


def test_service_idc_is_rate_matched():
    spec = T.make_tandem(0.9, E2, H2)
    assert spec.service_idc1.rate == pytest.approx(0.9)
    assert spec.c_s1 == pytest.approx(4.0) and spec.c_a1 == pytest.approx(0.5)
    assert spec.rho1 == pytest.approx(0.9)


@pytest.mark.parametrize("arr,svc", [(H2, E2), (E2, H2)], ids=["H2-E2", "E2-H2"])
def test_departure_idc_against_simulation(arr, svc):
    spec = T.make_tandem(0.9, arr, svc)
    t = np.logspace(0, 2, 7)
    mc = S.departure_idc_monte_carlo(spec.upstream, t, 2e6, seed=3)
    approx = T.departure_idc(spec)(t)
    assert np.max(np.abs(approx / mc.values - 1)) <= 0.15


def test_tandem_markov_upstream_equals_plain(surface_k1):
    spec = T.make_tandem(0.9, "exponential", "exponential", alpha=1 / 8)
    plain = Q.make_model(0.9, alpha=1 / 8)
    assert T.solve_tandem_rq(spec, surface_k1).z == pytest.approx(Q.solve_refined_rq(plain, surface_k1).z, rel=1e-12)


def test_tandem_light_upstream_approaches_raw_arrivals(surface_k1):
    spec = T.make_tandem(0.9, H2, E2, mu1=1e4, alpha=1 / 8)
    raw = Q.make_model(0.9, alpha=1 / 8, interarrival=H2)
    assert T.solve_tandem_rq(spec, surface_k1).z == pytest.approx(Q.solve_refined_rq(raw, surface_k1).z, rel=1e-3)


def test_tandem_accuracy_h2_e2(surface_k1):
    spec = T.make_tandem(0.9, H2, E2, patience2=H2, alpha=1 / 8)
    sim = S.simulate_tandem(spec.upstream, spec.queue2, S.SimConfig(spec.queue2, 1e6, warmup_time=2e4, seed=1))
    z = T.solve_tandem_rq(spec, surface_k1).z
    assert abs(z / sim.mean_virtual_wait - 1) <= 0.20


def test_tandem_spec_validation():
    spec = T.make_tandem(0.8, "exponential", "exponential")
    with pytest.raises(ParameterError):
        T.TandemSpec(0.8, 1.2, spec.arrival_idc1, spec.service_idc1, spec.queue2)
    with pytest.raises(ParameterError):
        T.make_tandem(1.2, "exponential", "exponential")
