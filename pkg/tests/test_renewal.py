import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from rqab import dist as D
from rqab import renewal as R
from rqab.exceptions import ParameterError, UnsupportedDistributionError

GRID = np.array([0.05, 0.2, 1.0, 3.0, 10.0, 40.0])


def erlang2_idc(t):
    # from the ordinary renewal function M(s) = s - 1/4 + exp(-4s)/4 (mean 1)
    return 0.5 + (1 - np.exp(-4 * t)) / (8 * t)


def h2_idc(t, scv=4.0):
    # balanced H2 with mean 1: M(s) = s + (scv-1)/2 (1 - exp(-theta s)), theta = 4 p1 p2
    p1 = 0.5 * (1 + math.sqrt((scv - 1) / (scv + 1)))
    theta = 4 * p1 * (1 - p1)
    k = (scv - 1) / 2
    return 1 + 2 * k * (1 - (1 - np.exp(-theta * t)) / (theta * t))


def renewal_quadrature_idc(d, t):
    """I(t) = 1 + (2/t) int_0^t (M(s) - lam s) ds with M from the renewal equation."""
    # discretized renewal equation M = F + F * M on a fine grid
    n = 4000
    s = np.linspace(0, t, n + 1)
    F = d.cdf(s)
    dF = np.diff(F)
    M = np.zeros(n + 1)
    for i in range(1, n + 1):
        # Stieltjes sum with midpoint values of M
        j = np.arange(1, i + 1)
        M[i] = F[i] + np.sum(dF[j - 1] * 0.5 * (M[i - j] + M[i - j + 1]))
    return 1 + 2 / t * integrate.trapezoid(M - s / d.mean, s)


def test_poisson_is_flat():
    c = R.idc_phase_type(D.exponential(2.0), GRID)
    np.testing.assert_allclose(c.values, 1.0, atol=1e-12)
    assert R.IdcCurve.poisson(3.0)(GRID).tolist() == [1.0] * GRID.size


def test_erlang2_against_closed_form():
    c = R.idc_phase_type(D.erlang(2), GRID)
    assert c.limit_c2 == pytest.approx(0.5)
    np.testing.assert_allclose(c.values, erlang2_idc(GRID), rtol=1e-10)


def test_h2_against_closed_form():
    c = R.idc_phase_type(D.hyperexp2(4.0), GRID)
    assert c.limit_c2 == pytest.approx(4.0)
    np.testing.assert_allclose(c.values, h2_idc(GRID), rtol=1e-10)
    assert abs(R.idc_phase_type(D.hyperexp2(4.0), [1e-3]).values[0] - 1) <= 0.05


def test_erlang3_against_renewal_equation():
    d = D.erlang(3, 1.0)
    c = R.idc_phase_type(d, [0.5, 2.0])
    for t, v in zip(c.t_grid, c.values):
        assert v == pytest.approx(renewal_quadrature_idc(d, t), rel=2e-3)


def test_phase_type_rejects_lognormal():
    with pytest.raises(UnsupportedDistributionError):
        R.idc_phase_type(D.lognormal(1.0, 4.0), GRID)


@pytest.mark.parametrize("bad", [[], [1.0, 0.5], [0.0, 1.0], [-1.0]])
def test_grid_validation(bad):
    with pytest.raises(ParameterError):
        R.idc_phase_type(D.erlang(2), bad)


def test_tabulated_interpolation_and_clamping():
    c = R.idc_phase_type(D.hyperexp2(4.0))
    assert c(1e9) == 4.0
    assert c(0.0) == pytest.approx(1.0)
    t = np.logspace(-2, 3, 50)
    np.testing.assert_allclose(c(t), h2_idc(t), rtol=1e-6)
    # reproducible bit for bit
    assert np.array_equal(c(t), R.idc_phase_type(D.hyperexp2(4.0))(t))


def test_rate_one_rescaling():
    c = R.idc_phase_type(D.erlang(2, 0.5))
    assert c.rate == pytest.approx(2.0)
    s = np.array([0.3, 1.0, 7.0])
    np.testing.assert_allclose(c.rate_one(s), erlang2_idc(s), rtol=1e-6)


@pytest.mark.parametrize(
    "d",
    [D.exponential(), D.erlang(2), D.hyperexp2(4.0)],
    ids=["exp", "erlang2", "h2"],
)
def test_monte_carlo_agrees_with_phase_type(d):
    grid = np.array([0.1, 1.0, 10.0, 100.0])
    mc = R.idc_monte_carlo(d, grid, n_paths=20_000, seed=7)
    ex = R.idc_phase_type(d, grid)
    z = np.abs(mc.values - ex.values) / mc.stderr
    assert np.all(z <= 3.0), z
    assert mc.source is R.IdcSource.MONTE_CARLO


def test_monte_carlo_refuses_few_paths():
    with pytest.raises(ParameterError, match="minimum"):
        R.idc_monte_carlo(D.exponential(), GRID, n_paths=100)


def test_monte_carlo_lognormal_runs():
    mc = R.idc_monte_carlo(D.lognormal(1.0, 1.0), np.array([0.5, 5.0, 50.0]), n_paths=10_000, seed=3)
    assert np.all(mc.values > 0)
    assert abs(mc.values[-1] - 1.0) <= 3 * mc.stderr[-1] + 0.05


def test_deterministic_lattice_idc():
    c = R.idc_for(D.deterministic(1.0), [0.25, 1.0, 2.5])
    np.testing.assert_allclose(c.values[[0, 2]], [0.75, 0.1], rtol=1e-12)


def test_idw_from_idc():
    pois = R.IdcCurve.poisson()
    assert np.all(R.idw_from_idc(pois, 1.0)(GRID) == 2.0)
    e2 = R.idc_phase_type(D.erlang(2), GRID)
    np.testing.assert_array_equal(R.idw_from_idc(e2, 0.0)(GRID), e2(GRID))
    h2 = R.idc_phase_type(D.hyperexp2(4.0), GRID)
    assert R.idw_from_idc(h2, 1.0).limit_cx2 == pytest.approx(5.0)


def test_effective_idw_surrogate():
    h2 = R.idc_phase_type(D.hyperexp2(4.0), GRID)
    plain = R.idw_from_idc(h2, 0.7)
    np.testing.assert_allclose(R.effective_idw_surrogate(h2, 0.8, 0.7)(GRID), plain(GRID))
    four = R.IdcCurve.constant_curve(4.0)
    assert R.effective_idw_surrogate(four, 2.0, 1.0)(3.0) == pytest.approx(3.5)
    assert R.effective_idw_surrogate(four, 1e12, 1.0)(3.0) == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(ParameterError):
        R.effective_idw_surrogate(four, 0.0, 1.0)


@pytest.mark.parametrize("rho", [0.3, 1.0, 1.7, 5.0])
def test_effective_arrival_part_is_convex_combination(rho):
    for d in (D.erlang(2), D.hyperexp2(4.0)):
        c = R.idc_phase_type(d, GRID)
        part = R.effective_idw_surrogate(c, rho, 0.0)(GRID)
        ia = c(GRID)
        assert np.all(part >= np.minimum(ia, 1) - 1e-14)
        assert np.all(part <= np.maximum(ia, 1) + 1e-14)


def test_csv_round_trip(tmp_path):
    mc = R.idc_monte_carlo(D.hyperexp2(4.0), np.array([1.0, 10.0, 300.0]), 10_000, seed=1)
    p = R.write_idc_csv(mc, tmp_path / "idc.csv")
    assert p.read_text().startswith("# schema: rqab.idc/1\n")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        back = R.read_idc_csv(p)
    np.testing.assert_array_equal(back.values, mc.values)
    np.testing.assert_array_equal(back.stderr, mc.stderr)
    assert back.rate == mc.rate and back.limit_c2 == 4.0


def test_csv_tail_warning(tmp_path):
    c = R.idc_phase_type(D.hyperexp2(4.0), [0.1, 1.0, 5.0])
    p = R.write_idc_csv(c, tmp_path / "short.csv")
    with pytest.warns(UserWarning, match="1%"):
        R.read_idc_csv(p)
