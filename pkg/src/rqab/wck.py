"""Variance-reduction function ``w_{c,k}`` of the base reflected diffusion.

The base diffusion is ``dZ = (c - Z^k) dt + sqrt(2) dB + dL`` on ``[0, inf)``.
Its effective input ``Y(t) = sqrt(2) B(t) - int_0^t Z^k`` has variance
``2 t w_{c,k}(t)``, computed here from two parabolic PDEs:

* ``psi_t = psi_xx + (c - x^k) psi_x - k x^{k-1} psi``, ``psi(0,.) = 1``,
  ``psi(t,0) = 1`` (killed Feynman-Kac weight up to the first zero);
* ``h_t = h_xx + (c - x^k) h_x + x^k``, ``h(0,.) = 0``, ``h_x(t,0) = 0``
  (expected accumulated ``Z^k``);

and ``w(t) = (1/t) int_0^t E_pi[psi(u,Z)^2] du + Var_pi(h(t,Z)) / (2t)``.
The long-run value comes from the Poisson equation of the generator.

Any parameter tuple maps to base coordinates via :func:`scale_map`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import integrate, interpolate

from .exceptions import CoverageError, GridRefinementError, ParameterError, RQError

__all__ = [
    "BasePair",
    "ParameterTuple",
    "StationaryDensity",
    "PdeGrid",
    "PdeSolution",
    "WckSurface",
    "stationary_density",
    "make_pde_grid",
    "time_schedule",
    "solve_psi_pde",
    "solve_h_pde",
    "wck_curve",
    "wck_infinity",
    "poisson_gradient",
    "wck_terms",
    "build_surface",
    "scale_map",
    "variance_function",
    "load_or_build_surface",
    "default_c_grid",
    "default_t_grid",
    "default_cache_dir",
]

log = logging.getLogger(__name__)

SURFACE_FORMAT = 1
PSI_BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class BasePair:
    c: float
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k}")
        if not math.isfinite(self.c):
            raise ParameterError("c must be finite")


@dataclass(frozen=True)
class ParameterTuple:
    """``(c, k, mu, c_a^2, c_s^2, F^(k)(0))``."""

    c: float
    k: int
    mu: float = 1.0
    c_a2: float = 1.0
    c_s2: float = 1.0
    Fk0: float = 1.0

    def __post_init__(self):
        BasePair(self.c, self.k)
        if not self.mu > 0:
            raise ParameterError("mu must be positive")
        if self.c_a2 < 0 or self.c_s2 < 0 or not self.c_x2 > 0:
            raise ParameterError("c_a2, c_s2 must be nonnegative with positive sum")
        if not self.Fk0 > 0:
            raise ParameterError("Fk0 must be positive")

    @property
    def c_x2(self) -> float:
        return self.c_a2 + self.c_s2

    @property
    def beta(self) -> float:
        return self.Fk0 / math.factorial(self.k)


def scale_map(xi: ParameterTuple) -> tuple[float, float]:
    """Base coordinates ``(c_tilde, tau)`` with ``v(t; xi) = (c_x^2/mu) t w_{c_tilde,k}(tau t)``."""
    k = xi.k
    s = xi.c_x2 / (2.0 * xi.mu)
    tau = s ** ((k - 1) / (k + 1)) * xi.beta ** (2.0 / (k + 1))
    c_tilde = xi.c * s ** (-k / (k + 1)) * xi.beta ** (-1.0 / (k + 1))
    return c_tilde, tau


def variance_function(xi: ParameterTuple, t, w) -> np.ndarray:
    """``v(t; xi)`` given a callable ``w(c, t)`` for the base family."""
    c_tilde, tau = scale_map(xi)
    t = np.asarray(t, dtype=float)
    return xi.c_x2 / xi.mu * t * w(c_tilde, tau * t)


# -- stationary density ----------------------------------------------------------


def _log_kernel(x, c, k):
    return c * x - x ** (k + 1) / (k + 1)


@dataclass(frozen=True, eq=False)
class StationaryDensity:
    """``pi(x) = exp(c x - x^{k+1}/(k+1)) / G`` on ``x >= 0``.

    ``log_G`` is stored instead of ``G`` when the latter would overflow;
    ``shift`` is the log-kernel value at the mode.
    """

    c: float
    k: int
    log_G: float
    m_k: float
    upper: float

    @property
    def G(self) -> float:
        return math.exp(self.log_G)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, _log_kernel(np.maximum(x, 0.0), self.c, self.k) - self.log_G, -np.inf)
        return out if out.ndim else float(out)

    def __call__(self, x):
        return np.exp(self.log_pdf(x))

    @property
    def mode(self) -> float:
        return max(self.c, 0.0) ** (1.0 / self.k)

    def tail_mass(self, x: float) -> float:
        val, _ = integrate.quad(lambda y: math.exp(self.log_pdf(y)), x, self.upper + 50.0, limit=200)
        return val

    def quantile(self, p: float) -> float:
        """Upper quantile used for domain truncation (``p`` close to 1)."""
        lo, hi = 0.0, self.upper
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.tail_mass(mid) > 1.0 - p:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-10 * max(1.0, hi):
                break
        return hi


def _kernel_upper(c: float, k: int, drop: float = 60.0) -> float:
    """Point beyond the mode where the log-kernel has fallen by ``drop``."""
    mode = max(c, 0.0) ** (1.0 / k)
    peak = _log_kernel(mode, c, k)
    x = mode + 1.0
    while _log_kernel(x, c, k) > peak - drop:
        x = mode + 2.0 * (x - mode)
    return x


def stationary_density(c: float, k: int) -> StationaryDensity:
    BasePair(c, k)
    mode = max(c, 0.0) ** (1.0 / k)
    peak = _log_kernel(mode, c, k)
    upper = _kernel_upper(c, k)
    pts = [p for p in (mode,) if 0 < p < upper]
    f = lambda x: math.exp(_log_kernel(x, c, k) - peak)  # noqa: E731
    opts = dict(limit=400, epsabs=0.0, epsrel=1e-13, points=pts or None)
    g, _ = integrate.quad(f, 0.0, upper, **opts)
    mk, _ = integrate.quad(lambda x: x**k * f(x), 0.0, upper, **opts)
    return StationaryDensity(float(c), int(k), peak + math.log(g), mk / g, upper)


# -- PDE machinery ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PdeGrid:
    x: np.ndarray
    weights: np.ndarray  # trapezoid weights times pi, summing to one
    X: float
    grading: float


def make_pde_grid(c: float, k: int, n_x: int = 2000, X: float | None = None, grading: float = 3.0) -> PdeGrid:
    """Graded grid on ``[0, X]``, denser near the reflecting boundary."""
    dens = stationary_density(c, k)
    if X is None:
        X = max(dens.quantile(1.0 - 1e-10), 2.0 * (abs(c) + 1.0) ** (1.0 / k) + 10.0)
    elif dens.tail_mass(X) > 1e-10:
        raise ParameterError(f"X={X} leaves stationary tail mass above 1e-10")
    if n_x < 50:
        raise ParameterError("n_x must be at least 50")
    s = np.linspace(0.0, 1.0, n_x)
    x = X * np.expm1(grading * s) / math.expm1(grading) if grading > 0 else X * s
    trap = np.empty(n_x)
    dx = np.diff(x)
    trap[0] = dx[0] / 2
    trap[-1] = dx[-1] / 2
    trap[1:-1] = (dx[:-1] + dx[1:]) / 2
    w = trap * dens(x)
    return PdeGrid(x=x, weights=w / w.sum(), X=float(X), grading=grading)


def _operator(x: np.ndarray, c: float, k: int, potential: bool):
    """Tridiagonal rows of ``u_xx + (c - x^k) u_x [- k x^{k-1} u]`` at nodes ``1..N``.

    Central differences switch to upwinding where the cell Peclet number
    exceeds one.  The last row uses a mirrored ghost node (zero flux).
    """
    n = x.size
    hm = np.empty(n)
    hp = np.empty(n)
    hm[1:] = np.diff(x)
    hp[:-1] = np.diff(x)
    hm[0] = hp[0]
    hp[-1] = hm[-1]
    b = c - x**k
    lo = 2.0 / (hm * (hm + hp))
    up = 2.0 / (hp * (hm + hp))
    di = -lo - up
    pe = np.abs(b) * np.maximum(hm, hp) / 2.0
    central = pe <= 1.0
    clo = np.where(central, -hp / (hm * (hm + hp)), np.where(b < 0, -1.0 / hm, 0.0))
    cdi = np.where(central, (hp - hm) / (hm * hp), np.where(b < 0, 1.0 / hm, -1.0 / hp))
    cup = np.where(central, hm / (hp * (hm + hp)), np.where(b < 0, 0.0, 1.0 / hp))
    lo = lo + b * clo
    di = di + b * cdi
    up = up + b * cup
    if potential:
        di = di - k * x ** (k - 1)
    # zero-flux outer boundary: ghost u_{N+1} = u_{N-1}
    h = hm[-1]
    lo[-1] = 2.0 / h**2
    di[-1] = -2.0 / h**2 - (k * x[-1] ** (k - 1) if potential else 0.0)
    up[-1] = 0.0
    return lo, di, up


@njit(cache=True)
def _march(lo, di, up, src, u, bc_mode, bc_a, bc_b, dts, thetas, wts, snap_at, snaps, stats):
    """Theta-scheme time stepping on nodes 1..N with node 0 from the boundary rule.

    bc_mode 0: u[0] = bc_a (Dirichlet); bc_mode 1: u[0] = bc_a*u[1] + bc_b*u[2].
    stats[j] = (E[u], E[u^2], E[(u - E u)^2], min u, max u) after step j.
    """
    n = u.size - 1
    aa = np.empty(n)
    bb = np.empty(n)
    cc = np.empty(n)
    dd = np.empty(n)
    cp = np.empty(n)
    dp = np.empty(n)
    l1 = lo[1:].copy()
    d1 = di[1:].copy()
    u1 = up[1:].copy()
    f = src[1:].copy()
    if bc_mode == 0:
        f[0] += lo[1] * bc_a
    else:
        d1[0] += lo[1] * bc_a
        u1[0] += lo[1] * bc_b
    snap = 0
    for j in range(dts.size):
        dt = dts[j]
        th = thetas[j]
        ex = (1.0 - th) * dt
        for i in range(n):
            v = u[i + 1] + ex * d1[i] * u[i + 1] + dt * f[i]
            if i > 0:
                v += ex * l1[i] * u[i]
            if i < n - 1:
                v += ex * u1[i] * u[i + 2]
            dd[i] = v
            aa[i] = -th * dt * l1[i]
            bb[i] = 1.0 - th * dt * d1[i]
            cc[i] = -th * dt * u1[i]
        # Thomas algorithm
        cp[0] = cc[0] / bb[0]
        dp[0] = dd[0] / bb[0]
        for i in range(1, n):
            m = bb[i] - aa[i] * cp[i - 1]
            cp[i] = cc[i] / m
            dp[i] = (dd[i] - aa[i] * dp[i - 1]) / m
        u[n] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            u[i + 1] = dp[i] - cp[i] * u[i + 2]
        if bc_mode == 0:
            u[0] = bc_a
        else:
            u[0] = bc_a * u[1] + bc_b * u[2]
        m1 = 0.0
        m2 = 0.0
        lo_v = u[0]
        hi_v = u[0]
        for i in range(n + 1):
            m1 += wts[i] * u[i]
            m2 += wts[i] * u[i] * u[i]
            if u[i] < lo_v:
                lo_v = u[i]
            if u[i] > hi_v:
                hi_v = u[i]
        vc = 0.0
        for i in range(n + 1):
            vc += wts[i] * (u[i] - m1) ** 2
        stats[j, 0] = m1
        stats[j, 1] = m2
        stats[j, 2] = vc
        stats[j, 3] = lo_v
        stats[j, 4] = hi_v
        if snap < snap_at.size and snap_at[snap] == j:
            snaps[snap, :] = u
            snap += 1


def time_schedule(t_out, dt_min: float = 1e-6, growth: float = 0.02, dt_max: float = 5e-3):
    """Graded steps ``dt = clip(growth * t, dt_min, dt_max)`` that land on every output time.

    Returns ``(dts, out_idx)`` where ``out_idx[i]`` is the step after which
    ``t_out[i]`` is reached.
    """
    t_out = np.asarray(t_out, dtype=float)
    if t_out.size == 0 or np.any(t_out <= 0) or np.any(np.diff(t_out) <= 0):
        raise ParameterError("output times must be positive and increasing")
    dts = []
    idx = []
    t = 0.0
    for target in t_out:
        while True:
            dt = min(dt_max, max(dt_min, growth * t))
            if t + 1.25 * dt >= target:
                dt = target - t
                dts.append(dt)
                t = float(target)
                idx.append(len(dts) - 1)
                break
            dts.append(dt)
            t += dt
    return np.asarray(dts), np.asarray(idx, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PdeSolution:
    """Snapshots ``values[i, :]`` at times ``t[i]`` on the grid ``x``.

    ``step_t`` and ``stats`` hold every time step (for time integrals).
    """

    c: float
    k: int
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    step_t: np.ndarray
    stats: np.ndarray
    grid: PdeGrid
    params: dict = field(default_factory=dict)

    def at(self, t: float, x):
        """Value at a stored time, linearly interpolated in ``x``."""
        i = int(np.argmin(np.abs(self.t - t)))
        if not math.isclose(self.t[i], t, rel_tol=1e-12, abs_tol=1e-15):
            raise ParameterError(f"time {t} is not a stored snapshot")
        return np.interp(x, self.x, self.values[i])


def _run(kind: str, c: float, k: int, t_out, n_x=2000, X=None, grading=3.0, dt_min=1e-6,
         growth=0.02, dt_max=5e-3, rannacher=4) -> PdeSolution:
    BasePair(c, k)
    grid = make_pde_grid(c, k, n_x=n_x, X=X, grading=grading)
    x = grid.x
    dts, out_idx = time_schedule(t_out, dt_min=dt_min, growth=growth, dt_max=dt_max)
    thetas = np.full(dts.size, 0.5)
    thetas[:rannacher] = 1.0
    if kind == "psi":
        lo, di, up = _operator(x, c, k, potential=True)
        src = np.zeros_like(x)
        u = np.ones_like(x)
        bc_mode, bc_a, bc_b = 0, 1.0, 0.0
    else:
        lo, di, up = _operator(x, c, k, potential=False)
        src = x**k
        u = np.zeros_like(x)
        # second-order one-sided u_x(0) = 0 on the graded grid, solved for u0
        h1, h2 = x[1] - x[0], x[2] - x[1]
        a0 = -(2 * h1 + h2) / (h1 * (h1 + h2))
        a1 = (h1 + h2) / (h1 * h2)
        a2 = -h1 / (h2 * (h1 + h2))
        bc_mode, bc_a, bc_b = 1, -a1 / a0, -a2 / a0
    snaps = np.empty((out_idx.size, x.size))
    stats = np.empty((dts.size, 5))
    _march(lo, di, up, src, u, bc_mode, bc_a, bc_b, dts, thetas, grid.weights, out_idx, snaps, stats)
    if kind == "psi":
        lo_v, hi_v = stats[:, 3].min(), stats[:, 4].max()
        if lo_v < -PSI_BOUND_SLACK or hi_v > 1.0 + PSI_BOUND_SLACK:
            raise GridRefinementError(
                f"psi left [0,1] before clipping (min {lo_v:.3e}, max {hi_v:.6f}) for c={c}, k={k}; "
                f"refine the grid (n_x={n_x}, dt_max={dt_max})"
            )
        snaps = np.clip(snaps, 0.0, 1.0)
    if not np.all(np.isfinite(stats)):
        raise GridRefinementError(f"non-finite {kind} values for c={c}, k={k}")
    params = dict(n_x=n_x, X=grid.X, grading=grading, dt_min=dt_min, growth=growth, dt_max=dt_max,
                  rannacher=rannacher, steps=int(dts.size))
    return PdeSolution(float(c), int(k), np.asarray(t_out, dtype=float), x, snaps, np.cumsum(dts), stats, grid, params)


def solve_psi_pde(c: float, k: int, t_out, **grid) -> PdeSolution:
    """Killed Feynman-Kac weight ``psi(t, x)`` at the requested times."""
    return _run("psi", c, k, np.atleast_1d(t_out), **grid)


def solve_h_pde(c: float, k: int, t_out, **grid) -> PdeSolution:
    """Expected accumulated ``Z^k`` from ``x``: ``h(t, x)`` at the requested times."""
    return _run("h", c, k, np.atleast_1d(t_out), **grid)


def wck_terms(c: float, k: int, t_grid, **grid) -> tuple[np.ndarray, np.ndarray]:
    """The two terms of ``w`` separately: the Cesaro average of ``E psi^2`` and ``Var h / 2t``."""
    t_grid = np.asarray(t_grid, dtype=float)
    psi = solve_psi_pde(c, k, t_grid, **grid)
    h = solve_h_pde(c, k, t_grid, **grid)
    # trapezoid in time of E_pi[psi^2], starting from 1 at u = 0
    st = np.concatenate([[0.0], psi.step_t])
    e2 = np.concatenate([[1.0], psi.stats[:, 1]])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (e2[1:] + e2[:-1]) * np.diff(st))])
    _, out_idx = time_schedule(t_grid, grid.get("dt_min", 1e-6), grid.get("growth", 0.02), grid.get("dt_max", 5e-3))
    first = cum[out_idx + 1] / t_grid
    second = h.stats[out_idx, 2] / (2.0 * t_grid)
    return first, second


def wck_curve(c: float, k: int, t_grid, **grid) -> np.ndarray:
    """``w_{c,k}`` on ``t_grid`` (positive, increasing)."""
    first, second = wck_terms(c, k, t_grid, **grid)
    return np.clip(first + second, 0.0, 1.0)


def poisson_gradient(c: float, k: int, n: int = 40001) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(x, u'(x), pi(x))`` for the Poisson equation ``u'' + (c - x^k) u' = x^k - m_k``.

    ``u'(x) = (1/pi(x)) int_0^x pi(y) (y^k - m_k) dy``; past the mode the
    right-tail form ``-(1/pi(x)) int_x^inf ...`` is used, which avoids
    cancellation.
    """
    dens = stationary_density(c, k)
    x = np.linspace(0.0, dens.upper, n)
    p = np.exp(dens.log_pdf(x))
    m_k = integrate.simpson(x**k * p, x=x) / integrate.simpson(p, x=x)
    g = p * (x**k - m_k)
    left = integrate.cumulative_simpson(g, x=x, initial=0.0)
    right = integrate.cumulative_simpson(g[::-1], x=-x[::-1], initial=0.0)[::-1]  # int_x^end g
    num = np.where(x <= dens.mode, left, -right)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        uprime = np.where(p > 0, num / p, 0.0)
    resid = abs(left[-1]) / max(integrate.simpson(np.abs(g), x=x), 1e-300)
    if resid > 1e-8:
        raise RQError(f"Poisson-equation quadrature failed for c={c}, k={k} (balance residual {resid:.2e})")
    return x, uprime, p


def wck_infinity(c: float, k: int, n: int = 40001) -> float:
    """Long-run value ``E_pi[(1 + u'(Z))^2]``."""
    x, uprime, p = poisson_gradient(c, k, n)
    val = integrate.simpson((1.0 + uprime) ** 2 * p, x=x) / integrate.simpson(p, x=x)
    if not math.isfinite(val):
        raise RQError(f"w_inf quadrature failed for c={c}, k={k}")
    return float(min(max(val, 0.0), 1.0))


# -- tabulated surfaces and cache -------------------------------------------------


def default_c_grid() -> np.ndarray:
    return np.linspace(-10.0, 10.0, 41)


def default_t_grid() -> np.ndarray:
    return np.logspace(-3, 2, 60)


def default_cache_dir() -> Path:
    env = os.environ.get("RQAB_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "rqab"


DEFAULT_PDE = dict(n_x=2000, grading=3.0, dt_min=1e-6, growth=0.02, dt_max=5e-3, rannacher=4)


@dataclass(frozen=True, eq=False)
class WckSurface:
    """Tabulated ``(c, t) -> w_{c,k}(t)`` with a separate ``w(inf)`` column.

    Between grid columns the value is linear in ``c``; along ``t`` it is
    monotone-cubic in ``log t``, linear from ``w(0) = 1`` below the grid, and
    beyond the grid it decays to ``w(inf)`` like ``1/t``.
    """

    k: int
    c_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    w_inf: np.ndarray
    meta: dict
    path: Path | None = None
    _interps: tuple = field(default=(), repr=False)

    def __post_init__(self):
        logt = np.log(self.t_grid)
        interps = tuple(interpolate.PchipInterpolator(logt, row) for row in self.values)
        object.__setattr__(self, "_interps", interps)

    @property
    def c_range(self) -> tuple[float, float]:
        return float(self.c_grid[0]), float(self.c_grid[-1])

    def clamp_c(self, c: float, strict: bool = False) -> tuple[float, bool]:
        lo, hi = self.c_range
        inside = lo <= c <= hi
        if not inside and strict:
            raise CoverageError(f"c_tilde={c:.6g} lies outside the surface range [{lo}, {hi}] (k={self.k})")
        return float(min(max(c, lo), hi)), not inside

    def _column(self, j: int, t: np.ndarray) -> np.ndarray:
        tg = self.t_grid
        out = np.empty(t.shape)
        below = t < tg[0]
        above = t > tg[-1]
        mid = ~(below | above)
        row = self.values[j]
        out[below] = 1.0 + (row[0] - 1.0) * np.maximum(t[below], 0.0) / tg[0]
        winf = self.w_inf[j]
        out[above] = winf + (row[-1] - winf) * tg[-1] / t[above]
        out[mid] = self._interps[j](np.log(t[mid]))
        return out

    def __call__(self, c: float, t, strict: bool = False):
        c, _ = self.clamp_c(float(c), strict)
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        j = int(np.clip(np.searchsorted(self.c_grid, c) - 1, 0, self.c_grid.size - 2))
        c0, c1 = self.c_grid[j], self.c_grid[j + 1]
        lam = (c - c0) / (c1 - c0)
        out = (1 - lam) * self._column(j, flat) + lam * self._column(j + 1, flat)
        out = np.clip(out, 0.0, 1.0).reshape(t.shape)
        return out if out.ndim else float(out)

    def w_infinity(self, c: float, strict: bool = False) -> float:
        c, _ = self.clamp_c(float(c), strict)
        return float(np.interp(c, self.c_grid, self.w_inf))


def _surface_key(k, c_grid, t_grid, pde) -> str:
    blob = json.dumps(
        {"format": SURFACE_FORMAT, "k": int(k), "c": [float(v) for v in c_grid],
         "t": [float(v) for v in t_grid], "pde": pde},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _build_column(c, k, t_grid, pde):
    return wck_curve(c, k, t_grid, **pde), wck_infinity(c, k)


def build_surface(k: int, c_grid=None, t_grid=None, n_jobs: int = 1, **pde) -> WckSurface:
    c_grid = default_c_grid() if c_grid is None else np.asarray(c_grid, dtype=float)
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if c_grid.size < 2 or np.any(np.diff(c_grid) <= 0):
        raise ParameterError("c_grid needs at least two increasing values")
    if t_grid.size < 2 or t_grid[0] <= 0 or np.any(np.diff(t_grid) <= 0):
        raise ParameterError("t_grid needs at least two increasing positive values")
    pde = {**DEFAULT_PDE, **pde}
    if n_jobs == 1:
        cols = [_build_column(c, k, t_grid, pde) for c in c_grid]
    else:
        from joblib import Parallel, delayed

        cols = Parallel(n_jobs=n_jobs)(delayed(_build_column)(c, k, t_grid, pde) for c in c_grid)
    values = np.vstack([col[0] for col in cols])
    w_inf = np.array([col[1] for col in cols])
    meta = {"format": SURFACE_FORMAT, "k": int(k), "pde": pde, "key": _surface_key(k, c_grid, t_grid, pde)}
    return WckSurface(int(k), c_grid, t_grid, values, w_inf, meta)


def _save(surface: WckSurface, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, c_grid=surface.c_grid, t_grid=surface.t_grid, values=surface.values,
                     w_inf=surface.w_inf, meta=np.array(json.dumps(surface.meta, sort_keys=True)))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path: Path, key: str) -> WckSurface:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("key") != key:
            raise ValueError("cache key mismatch")
        surf = WckSurface(int(meta["k"]), z["c_grid"], z["t_grid"], z["values"], z["w_inf"], meta, path)
    if not (np.all(np.isfinite(surf.values)) and np.all((surf.values >= 0) & (surf.values <= 1))):
        raise ValueError("cached values outside [0, 1]")
    return surf


def load_or_build_surface(k: int, c_grid=None, t_grid=None, cache_dir=None, n_jobs: int = 1,
                          rebuild: bool = False, **pde) -> WckSurface:
    """Cached surface for ``k``; built and persisted on a miss or a corrupt file."""
    c_grid = default_c_grid() if c_grid is None else np.asarray(c_grid, dtype=float)
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    full = {**DEFAULT_PDE, **pde}
    key = _surface_key(k, c_grid, t_grid, full)
    path = Path(cache_dir if cache_dir is not None else default_cache_dir()) / f"wck_k{int(k)}_{key}.npz"
    if path.exists() and not rebuild:
        try:
            return _load(path, key)
        except Exception as exc:  # corrupt or foreign file
            warnings.warn(f"rebuilding w surface: cache file {path} unreadable ({exc})", stacklevel=2)
    log.info("building w surface k=%d (%d c values, %d t values)", k, c_grid.size, t_grid.size)
    surf = build_surface(k, c_grid, t_grid, n_jobs=n_jobs, **full)
    _save(surf, path)
    return WckSurface(surf.k, surf.c_grid, surf.t_grid, surf.values, surf.w_inf, surf.meta, path)
