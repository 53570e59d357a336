import math

import numpy as np
import pytest
from scipy import integrate, optimize

from rqab import dist as D
from rqab.exceptions import ParameterError, UnsupportedDistributionError, UnsupportedPatienceError

CONTINUOUS = [
    D.exponential(1.0),
    D.exponential(2.5),
    D.erlang(2, 1.0),
    D.erlang(3, 0.7),
    D.hyperexp2(4.0, 1.0),
    D.hyperexp2(1.5, 3.0),
    D.lognormal(1.0, 4.0),
    D.lognormal(2.0, 0.5),
]
ALL = CONTINUOUS + [D.deterministic(1.0)]


def test_exponential_median():
    assert D.exponential().cdf(math.log(2)) == pytest.approx(0.5, abs=1e-15)
    assert D.exponential().quantile(0.5) == pytest.approx(0.693147, abs=1e-6)


def test_erlang2_density_slope_at_zero():
    e2 = D.erlang(2, 1.0)
    eps = 1e-6
    assert e2.pdf(eps) / eps == pytest.approx(4.0, rel=1e-5)
    x = np.linspace(0, 5, 11)
    np.testing.assert_allclose(e2.pdf(x), 4 * x * np.exp(-2 * x), rtol=1e-13, atol=1e-300)


def test_balanced_hyperexp_parameters():
    h = D.hyperexp2(4.0)
    assert h._p[0] == pytest.approx(0.887298, abs=1e-6)
    assert h._p[1] == pytest.approx(0.112702, abs=1e-6)
    np.testing.assert_allclose(h._rates, 2 * h._p)
    # balanced: equal branch mean contributions
    assert h._p[0] / h._rates[0] == pytest.approx(h._p[1] / h._rates[1])
    m2 = 2 * (h._p[0] / h._rates[0] ** 2 + h._p[1] / h._rates[1] ** 2)
    assert m2 == pytest.approx(5.0, abs=1e-12)
    assert abs(h.scv - 4.0) <= 1e-9


@pytest.mark.parametrize(
    "d, k, coeff",
    [(D.exponential(), 1, 1.0), (D.erlang(2), 2, 4.0), (D.hyperexp2(4.0), 1, 1.6), (D.erlang(3, 2.0), 3, 1.5**3)],
)
def test_zero_expansion_values(d, k, coeff):
    z = D.zero_expansion(d)
    assert z.k == k
    assert z.coeff == pytest.approx(coeff, rel=1e-12)
    assert z.beta == pytest.approx(coeff / math.factorial(k))
    assert z.h == pytest.approx(k / (k + 1))


def test_zero_expansion_erlang2_h():
    assert D.erlang(2).zero_expansion().h == pytest.approx(2 / 3)


@pytest.mark.parametrize("d", [D.deterministic(1.0), D.lognormal(1.0, 4.0)])
def test_zero_expansion_rejects(d):
    with pytest.raises(UnsupportedPatienceError):
        d.zero_expansion()


def test_quantile_erlang2_median_matches_bisection():
    ref = optimize.bisect(lambda x: 1 - math.exp(-2 * x) * (1 + 2 * x) - 0.5, 0.0, 10.0, xtol=1e-15)
    assert D.quantile(D.erlang(2), 0.5) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("d", ALL, ids=repr)
def test_quantile_at_zero_and_domain(d):
    assert d.quantile(0.0) == 0.0
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ParameterError):
            d.quantile(bad)


@pytest.mark.parametrize(
    "spec",
    [
        dict(family="exponential", mean=0.0),
        dict(family="exponential", mean=-1.0),
        dict(family="hyperexp2", mean=1.0, scv=1.0),
        dict(family="hyperexp2", mean=1.0, scv=0.5),
        dict(family="erlang", mean=1.0, shape=0),
        dict(family="lognormal", mean=1.0, scv=0.0),
        dict(family="weibull", mean=1.0),
        dict(family="exponential", mean=1.0, rate=3.0),
    ],
)
def test_invalid_parameters(spec):
    with pytest.raises(ParameterError):
        D.make_distribution(spec)


@pytest.mark.parametrize("d", CONTINUOUS, ids=repr)
def test_density_integrates_to_cdf(d):
    rng = np.random.default_rng(11)
    xs = d.quantile(0.999) * rng.random(1000)
    worst = 0.0
    for x in xs:
        val, _ = integrate.quad(d.pdf, 0.0, x, epsabs=1e-12, epsrel=1e-10, limit=200)
        worst = max(worst, abs(val - d.cdf(x)))
    assert worst <= 1e-6


@pytest.mark.parametrize("d", CONTINUOUS, ids=repr)
def test_quantile_inverts_cdf(d):
    xs = np.linspace(0.01, d.quantile(0.99), 60)
    for x in xs:
        assert d.quantile(float(d.cdf(x))) == pytest.approx(x, abs=1e-8)


@pytest.mark.parametrize("d", ALL, ids=repr)
def test_cdf_shape(d):
    x = np.linspace(0, d.quantile(1 - 1e-9) * 1.01, 2001)
    f = d.cdf(x)
    assert f[0] == 0.0
    assert np.all(np.diff(f) >= -1e-15)
    assert f[-1] == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(d.sf(x), 1 - f, atol=1e-14)


@pytest.mark.parametrize("d", [D.exponential(), D.erlang(2), D.erlang(4, 2.0), D.hyperexp2(4.0)], ids=repr)
def test_zero_expansion_consistency(d):
    z = d.zero_expansion()
    eps = 1e-4 * d.mean
    assert abs(d.cdf(eps) / eps**z.k - z.beta) <= 0.01 * z.beta


@pytest.mark.parametrize("d", ALL, ids=repr)
def test_sample_moments(d):
    rng = np.random.default_rng(20240607)
    n = 1_000_000
    x = d.sample(rng, n)
    m = x.mean()
    se_mean = math.sqrt(d.var / n)
    assert abs(m - d.mean) <= 3 * se_mean + 1e-12
    if d.var > 0:
        scv = x.var() / m**2
        # delta-method standard error of the sample scv, estimated from the draws
        y = (x - m) ** 2 / m**2 - 2 * scv * (x - m) / m
        se_scv = y.std() / math.sqrt(n)
        assert abs(scv - d.scv) <= 3 * se_scv


@pytest.mark.parametrize("d", ALL, ids=repr)
def test_excess_sampling_mean(d):
    # stationary-excess mean is E[X^2] / (2 E[X])
    rng = np.random.default_rng(5)
    x = d.sample_excess(rng, 400_000)
    target = d.second_moment / (2 * d.mean)
    assert abs(x.mean() - target) <= 4 * x.std() / math.sqrt(x.size)


@pytest.mark.parametrize("d", ALL, ids=repr)
def test_integrated_sf_matches_quadrature(d):
    for y in (0.0, 0.3, 1.0, 2.7, 10.0):
        ref, _ = integrate.quad(lambda v: float(d.sf(v)), 0.0, y, points=[d.mean] if y > d.mean else None)
        assert d.integrated_sf(y) == pytest.approx(ref, abs=1e-9)


def test_integrated_sf_limit_is_mean():
    for d in ALL:
        assert d.integrated_sf(1e6 * d.mean) == pytest.approx(d.mean, rel=1e-9)


def test_logsf_deep_tail():
    assert D.erlang(2).logsf(500.0) == pytest.approx(-1000 + math.log(1001), rel=1e-12)
    h = D.hyperexp2(4.0)
    assert h.logsf(2000.0) == pytest.approx(math.log(h._p[1]) - h._rates[1] * 2000, rel=1e-12)
    assert np.isfinite(D.lognormal(1.0, 4.0).logsf(1e8))


def test_integrated_logsf_exponential_closed_form():
    d = D.exponential(2.0)
    assert d.integrated_logsf(3.0) == pytest.approx(-9 / 4)
    e2 = D.erlang(2)
    ref, _ = integrate.quad(lambda v: math.log(math.exp(-2 * v) * (1 + 2 * v)), 0, 3)
    assert e2.integrated_logsf(3.0) == pytest.approx(ref, rel=1e-10)


def test_phase_type_reproduces_cdf():
    from scipy.linalg import expm

    for d in (D.exponential(1.3), D.erlang(3, 1.0), D.hyperexp2(4.0)):
        a, T = d.phase_type()
        for x in (0.2, 1.0, 3.0):
            sf = a @ expm(T * x) @ np.ones(len(a))
            assert sf == pytest.approx(d.sf(x), rel=1e-12)
    with pytest.raises(UnsupportedDistributionError):
        D.lognormal().phase_type()


def test_deterministic_has_no_density():
    with pytest.raises(UnsupportedDistributionError):
        D.deterministic().pdf(0.5)


def test_serialization_round_trip():
    for d in ALL:
        rec = d.to_dict()
        assert D.Distribution.from_dict(rec) == d
    assert D.make_distribution({"family": "E", "shape": 2}).zero_expansion().k == 2


def test_normalize_patience():
    base, alpha = D.normalize_patience(D.erlang(2, 4.0))
    assert base.mean == 1.0 and alpha == 0.25
    assert base.zero_expansion().coeff == pytest.approx(4.0)
    for bad in (D.lognormal(), D.deterministic()):
        with pytest.raises(UnsupportedPatienceError):
            D.normalize_patience(bad)
