"""Exit criteria, one test per criterion, each at its stated tolerance.

Every test records a one-line verdict that pytest prints in an
"acceptance criteria" section of the terminal summary.
"""

import math
import time
import warnings

import numpy as np
import pytest
from _oracles import feynman_kac_psi
from scipy.stats import norm

from rqab import harness as H
from rqab import rqcore as Q
from rqab import sim as S
from rqab import tandem as T
from rqab import wck as W
from rqab.exactbench import exact_mm1_gi

pytestmark = pytest.mark.acceptance

SQRT2 = math.sqrt(2.0)
H2 = {"family": "hyperexp2", "scv": 4.0}
E2 = {"family": "erlang", "shape": 2}


def verdict(log, n, ok, detail):
    log.append((n, bool(ok), detail))
    assert ok, f"criterion {n}: {detail}"


def rel(a, b):
    return abs(a / b - 1.0)


def test_c01_exact_formula_regression(acceptance_log):
    t0 = time.perf_counter()
    m = Q.make_model(0.5, 1.0, alpha=1e-12)
    z = exact_mm1_gi(m, epsrel=1e-10)
    z_half = exact_mm1_gi(m, epsrel=5e-11)
    elapsed = time.perf_counter() - t0
    drift = rel(z_half, z)
    ok = rel(z, 1.0) <= 0.005 and drift < 1e-6 and elapsed < 1.0
    verdict(acceptance_log, 1, ok, f"z={z:.10f} tolerance-halving drift={drift:.1e} runtime={elapsed:.3f}s")


def test_c02_refined_accuracy_grid(acceptance_log):
    t0 = time.perf_counter()
    wck = W.load_or_build_surface(1)
    worst, where = 0.0, None
    for lam in (0.75, 0.9, 1.0, 1.1, 1.25):
        for a in (1 / 8, 1 / 32, 1 / 128):
            m = Q.make_model(lam, alpha=a)
            err = Q.solve_refined_rq(m, wck, SQRT2).z / exact_mm1_gi(m) - 1
            if abs(err) > abs(worst):
                worst, where = err, (lam, a)
    elapsed = time.perf_counter() - t0
    ok = abs(worst) <= 0.10 and elapsed < 120
    verdict(acceptance_log, 2, ok, f"worst signed error {worst:+.4f} at (lambda, alpha)={where} runtime={elapsed:.1f}s")


def test_c03_underloaded_limit(acceptance_log, surface_k1):
    m = Q.make_model(0.5, alpha=2.0**-13)
    ex = exact_mm1_gi(m)
    first = Q.solve_first_rq(m, b=SQRT2).z
    refined = Q.solve_refined_rq(m, surface_k1, SQRT2).z
    ok = rel(first, ex) <= 0.02 and rel(refined, ex) <= 0.02 and rel(ex, 1.0) <= 0.01
    verdict(acceptance_log, 3, ok, f"exact={ex:.5f} first={first:.5f} refined={refined:.5f}")


def test_c04_overloaded_limit(acceptance_log, surface_k1):
    a = 2.0**-13
    m = Q.make_model(2.0, alpha=a)
    vals = {"first": a * Q.solve_first_rq(m, b=SQRT2).z, "refined": a * Q.solve_refined_rq(m, surface_k1, SQRT2).z,
            "exact": a * exact_mm1_gi(m)}
    ok = all(rel(v, math.log(2)) <= 0.02 for v in vals.values())
    verdict(acceptance_log, 4, ok, " ".join(f"alpha*z[{k}]={v:.5f}" for k, v in vals.items()) + " (ln 2=0.69315)")


def test_c05_critical_constant(acceptance_log):
    v0 = Q.psi_constant(0.0, 1, 1.0, 1.0, True)
    devs = [abs(v0 - math.sqrt(2 / math.pi))]
    for c in (-2.0, 0.0, 2.0):
        closed = c + norm.pdf(-c) / (1 - norm.cdf(-c))
        devs.append(abs(Q.psi_constant(c, 1, 1.0, 1.0, True) - closed))
    ok = max(devs) <= 1e-6
    verdict(acceptance_log, 5, ok, f"psi(0)={v0:.9f} max deviation from closed forms {max(devs):.1e}")


def test_c06_first_b_calibration(acceptance_log):
    b_low = Q.calibrate_b_first(-10.0, 1, 1.0)
    b_crit = Q.calibrate_b_first(0.0, 1, 1.0)
    ok = rel(b_low, SQRT2) <= 0.01 and rel(b_crit, 2 / math.sqrt(math.pi)) <= 0.005
    verdict(acceptance_log, 6, ok, f"b(-10)={b_low:.5f} vs sqrt2, b(0)={b_crit:.5f} vs 2/sqrt(pi)=1.12838")


def test_c07_w_property_suite(acceptance_log, surface_k1, surface_k2):
    t0 = time.perf_counter()
    surfaces = {1: W.load_or_build_surface(1), 2: W.load_or_build_surface(2)}
    problems = []
    for k, s in surfaces.items():
        if not np.all((s.values >= 0) & (s.values <= 1)):
            problems.append(f"k={k}: values outside [0,1]")
        if np.any(np.diff(s.w_inf) > 0):
            problems.append(f"k={k}: w_inf increases in c")
        assert s.t_grid[-1] == 100.0
        for c in (-2.0, 0.0, 2.0):
            row = s.values[int(np.argmin(abs(s.c_grid - c)))]
            if np.any(np.diff(row) > 1e-3):
                problems.append(f"(c,k)=({c},{k}) increases in t")
            if row[0] < 0.99:
                problems.append(f"(c,k)=({c},{k}) w(t_min)={row[0]:.4f}")
            if abs(row[-1] - s.w_infinity(c)) > 0.01:
                problems.append(f"(c,k)=({c},{k}) |w(100)-w(inf)|={abs(row[-1] - s.w_infinity(c)):.4f}")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 1.0
    verdict(acceptance_log, 7, ok, f"{'; '.join(problems) or 'all properties hold'} (cached runtime {elapsed:.2f}s)")


@pytest.mark.slow
def test_c08_pde_vs_feynman_kac(acceptance_log):
    worst = 0.0
    for c, k in ((0.0, 1), (2.0, 2)):
        rng = np.random.default_rng(100 + k)
        pts = sorted(zip(rng.uniform(0.2, 1.5, 5).round(3), rng.uniform(0.2, 2.5, 5)))
        sol = W.solve_psi_pde(c, k, sorted({t for t, _ in pts}))
        for i, (t, x) in enumerate(pts):
            mean, se = feynman_kac_psi(c, k, x, t, n_paths=100_000, dt=1e-3, seed=i)
            worst = max(worst, abs(mean - sol.at(t, x)) / se)
    verdict(acceptance_log, 8, worst <= 3.0, f"largest |PDE - MC| = {worst:.2f} standard errors over 10 points")


def test_c09_simulator_calibration(acceptance_log):
    m = Q.make_model(0.9, 1.0, alpha=1 / 8)
    ex = exact_mm1_gi(m)
    hits = viol = 0
    for seed in range(100):
        est = S.simulate_queue(S.SimConfig(m, 1e5, warmup_time=1e4, seed=seed))
        hits += est.covers(ex)
        viol += est.domination_violations
    ok = hits >= 90 and viol == 0
    verdict(acceptance_log, 9, ok, f"coverage {hits}/100, domination violations {viol}")


@pytest.mark.slow
def test_c10_effective_idw_approximation(acceptance_log, surface_k1):
    a = 2.0**-6
    lam = 1 + 2 * a ** (2 / 3)
    m = Q.make_model(lam, 1.0, alpha=a, interarrival=H2)
    t = np.logspace(-1, 3, 20)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = S.estimate_effective_idw(S.SimConfig(m, 2e6, warmup_time=2e4, seed=7), t)
    approx = Q.effective_idw_approx(m, surface_k1, t)
    dev = np.abs(est.values - approx)
    ok = bool(np.all(est.reliable)) and dev.max() <= 0.5
    verdict(acceptance_log, 10, ok, f"max |simulated - approximate| = {dev.max():.3f} at t={t[dev.argmax()]:.3g}")


TANDEMS = {"H2/E2 -> M+H2": (H2, E2, H2), "E2/H2 -> M+E2": (E2, H2, E2)}


@pytest.mark.slow
def test_c11_tandem_accuracy(acceptance_log, surface_k1, surface_k2):
    parts, ok = [], True
    for name, (arr, svc, pat) in TANDEMS.items():
        for a in (1 / 8, 1 / 32):
            spec = T.make_tandem(0.9, arr, svc, patience2=pat, alpha=a)
            wck = surface_k1 if spec.queue2.zero_exp.k == 1 else surface_k2
            down = T.downstream_model(spec)
            b = Q.calibrated_b(down, "refined", wck)
            z = T.solve_tandem_rq(spec, wck, b).z
            z_sqrt2 = T.solve_tandem_rq(spec, wck, SQRT2).z
            sim = S.simulate_tandem(spec.upstream, spec.queue2,
                                    S.SimConfig(spec.queue2, 2e6, warmup_time=5e4, seed=11)).mean_virtual_wait
            err = z / sim - 1
            ok &= abs(err) <= 0.20
            parts.append(f"{name} alpha={a:g}: {err:+.3f} (b={b:.3f}; b=sqrt2 gives {z_sqrt2 / sim - 1:+.3f})")
    verdict(acceptance_log, 11, ok, "calibrated b; " + "; ".join(parts))


@pytest.mark.slow
def test_c12_grid_determinism(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    grid = H.GridSpec()
    first = H.run_grid(grid, tmp_path / "first.csv").read_bytes()
    second = H.run_grid(grid, tmp_path / "second.csv").read_bytes()
    elapsed = time.perf_counter() - t0
    n_rows = first.count(b"\n") - 3
    ok = first == second and elapsed < 1800
    verdict(acceptance_log, 12, ok, f"{n_rows} rows, identical={first == second}, runtime for two runs {elapsed:.1f}s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
