"""Index of dispersion for counts (IDC) of stationary renewal processes.

``I(t) = Var A(t) / (lambda t)`` for the equilibrium renewal counting process
``A``.  Curves are stored in physical time together with their rate, so the
rate-one version used by the RQ objectives is ``I(s / lambda)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import interpolate, linalg

from . import csvio
from .dist import Distribution, DistributionSpec, make_distribution
from .exceptions import ParameterError, UnsupportedDistributionError

__all__ = [
    "IdcSource",
    "IdcCurve",
    "IdwCurve",
    "default_t_grid",
    "idc_phase_type",
    "idc_monte_carlo",
    "idc_for",
    "idw_from_idc",
    "effective_idw_surrogate",
    "write_idc_csv",
    "read_idc_csv",
]

IDC_SCHEMA = "rqab.idc/1"
MIN_MC_PATHS = 10_000


class IdcSource(str, Enum):
    CLOSED_FORM = "closed_form"
    PHASE_TYPE = "phase_type"
    TABULATED = "tabulated"
    MONTE_CARLO = "monte_carlo"


def default_t_grid(mean: float = 1.0, lo: float = 1e-4, hi: float = 1e5, per_decade: int = 40) -> np.ndarray:
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n) * mean


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
        raise ParameterError("t_grid must be a nonempty, strictly increasing list of positive reals")
    return t


@dataclass(frozen=True, eq=False)
class IdcCurve:
    """Evaluable ``t -> I(t)``.

    A constant curve (Poisson, or any closed-form constant) sets ``constant``.
    Otherwise values on ``t_grid`` are interpolated monotone-cubically in
    ``log t``; below the grid the curve runs linearly from ``I(0+) = 1``, and
    beyond it the value is clamped to ``limit_c2``.
    """

    limit_c2: float
    source: IdcSource
    rate: float = 1.0
    t_grid: np.ndarray | None = None
    values: np.ndarray | None = None
    stderr: np.ndarray | None = None
    constant: float | None = None
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise ParameterError(f"rate must be positive, got {self.rate}")
        if self.limit_c2 < 0:
            raise ParameterError(f"limit_c2 must be nonnegative, got {self.limit_c2}")
        if self.constant is not None:
            return
        t = _check_grid(self.t_grid)
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != t.shape:
            raise ParameterError("t_grid and values differ in length")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ParameterError("IDC values must be positive and finite")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", v)
        if t.size >= 2:
            object.__setattr__(self, "_interp", interpolate.PchipInterpolator(np.log(t), v, extrapolate=False))

    @classmethod
    def poisson(cls, rate: float = 1.0) -> "IdcCurve":
        return cls(limit_c2=1.0, source=IdcSource.CLOSED_FORM, rate=rate, constant=1.0)

    @classmethod
    def constant_curve(cls, value: float, rate: float = 1.0) -> "IdcCurve":
        if not value > 0:
            raise ParameterError("constant IDC must be positive")
        return cls(limit_c2=float(value), source=IdcSource.CLOSED_FORM, rate=rate, constant=float(value))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.constant is not None:
            out = np.full(t.shape, self.constant)
            return out if out.ndim else float(out)
        tg, v = self.t_grid, self.values
        out = np.empty(t.shape)
        below = t < tg[0]
        above = t > tg[-1]
        inside = ~(below | above)
        out[below] = 1.0 + (v[0] - 1.0) * np.maximum(t[below], 0.0) / tg[0]
        out[above] = self.limit_c2
        if self._interp is not None:
            out[inside] = self._interp(np.log(t[inside]))
        else:
            out[inside] = v[0]
        return out if out.ndim else float(out)

    def rate_one(self, s):
        """IDC in the time scale where arrivals have rate one."""
        return self(np.asarray(s, dtype=float) / self.rate)

    def tabulate(self, t_grid) -> tuple[np.ndarray, np.ndarray]:
        t = _check_grid(t_grid)
        return t, np.asarray(self(t), dtype=float)


@dataclass(frozen=True, eq=False)
class IdwCurve:
    """Index of dispersion for work built from an arrival IDC.

    With ``rho=None`` this is the plain ``I_a(t) + c_s2``.  With a load it is
    the effective-arrival surrogate
    ``I_a(t)/(rho v 1) + (1 - 1/(rho v 1)) + c_s2``.
    """

    idc: IdcCurve
    c_s2: float
    rho: float | None = None

    def __post_init__(self):
        if self.c_s2 < 0:
            raise ParameterError(f"c_s2 must be nonnegative, got {self.c_s2}")
        if self.rho is not None and not self.rho > 0:
            raise ParameterError(f"rho must be positive, got {self.rho}")

    @property
    def _weight(self) -> float:
        return 1.0 if self.rho is None else 1.0 / max(self.rho, 1.0)

    def _combine(self, ia):
        w = self._weight
        return w * ia + (1.0 - w) + self.c_s2

    def __call__(self, t):
        return self._combine(self.idc(t))

    def rate_one(self, s):
        return self._combine(self.idc.rate_one(s))

    @property
    def limit_cx2(self) -> float:
        return float(self._combine(self.idc.limit_c2))

    @property
    def rate(self) -> float:
        return self.idc.rate


def _as_distribution(d) -> Distribution:
    if isinstance(d, Distribution):
        return d
    return make_distribution(d if isinstance(d, (dict, DistributionSpec)) else DistributionSpec(d))


def phase_type_idc_values(alpha: np.ndarray, T: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Stationary renewal IDC of a phase-type interarrival law ``(alpha, T)``.

    The counting process is the MAP with ``D0 = T`` and ``D1 = t0 alpha``;
    its variance is the standard second-moment formula for stationary MAPs.
    """
    n = T.shape[0]
    e = np.ones(n)
    t0 = -T @ e
    D1 = np.outer(t0, alpha)
    D = T + D1
    # stationary phase distribution: pi D = 0, pi e = 1
    M = np.vstack([D.T, e])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
    lam = float(pi @ D1 @ e)
    A = np.linalg.inv(np.outer(e, pi) - D)
    row = pi @ D1
    col = D1 @ e
    slope = lam - 2 * lam**2 + 2 * row @ A @ col
    AAc = A @ A @ col
    out = np.empty(t.shape)
    for i, ti in enumerate(t):
        var = slope * ti - 2 * row @ (AAc - linalg.expm(D * ti) @ AAc)
        out[i] = var / (lam * ti)
    return out


def idc_phase_type(interarrival, t_grid=None) -> IdcCurve:
    """Exact stationary IDC on ``t_grid`` for exponential, Erlang or balanced H2."""
    d = _as_distribution(interarrival)
    if not d.is_phase_type:
        raise UnsupportedDistributionError(
            f"{d.family.value} interarrivals are not phase-type; use idc_monte_carlo"
        )
    t = _check_grid(default_t_grid(d.mean) if t_grid is None else t_grid)
    alpha, T = d.phase_type()
    vals = phase_type_idc_values(alpha, T, t)
    return IdcCurve(limit_c2=d.scv, source=IdcSource.PHASE_TYPE, rate=1.0 / d.mean, t_grid=t, values=vals)


def idc_monte_carlo(sampler, t_grid, n_paths: int = 20_000, seed: int = 0, chunk: int = 2000) -> IdcCurve:
    """Monte Carlo IDC of the equilibrium renewal process.

    The first point is drawn from the stationary-excess law, the rest are
    i.i.d. interarrivals.  Standard errors come from the sample variance of
    the squared deviations of the counts.
    """
    d = _as_distribution(sampler)
    if n_paths < MIN_MC_PATHS:
        raise ParameterError(
            f"n_paths={n_paths} is below the minimum {MIN_MC_PATHS}; "
            "standard errors of the count variance would be unreliable"
        )
    t = _check_grid(t_grid)
    lam = 1.0 / d.mean
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = np.empty((n_paths, t.size))
    tmax = t[-1]
    expected = lam * tmax
    width = int(expected + 8 * math.sqrt(max(expected, 1.0) * max(d.scv, 1.0)) + 16)
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        first = d.sample_excess(rng, (m, 1))
        arrivals = np.cumsum(np.hstack([first, d.sample(rng, (m, width - 1))]), axis=1)
        short = arrivals[:, -1] <= tmax
        while np.any(short):
            last = arrivals[:, -1:]
            more = last + np.cumsum(d.sample(rng, (m, width)), axis=1)
            arrivals = np.hstack([arrivals, more])
            short = arrivals[:, -1] <= tmax
        for j, tj in enumerate(t):
            counts[done:done + m, j] = np.count_nonzero(arrivals <= tj, axis=1)
        done += m
    dev2 = (counts - counts.mean(axis=0)) ** 2
    var = dev2.sum(axis=0) / (n_paths - 1)
    se_var = dev2.std(axis=0, ddof=1) / math.sqrt(n_paths)
    scale = lam * t
    vals = np.maximum(var / scale, 1e-12)
    return IdcCurve(
        limit_c2=d.scv, source=IdcSource.MONTE_CARLO, rate=lam, t_grid=t, values=vals, stderr=se_var / scale
    )


def idc_for(interarrival, t_grid=None, n_paths: int = 20_000, seed: int = 0) -> IdcCurve:
    """Best available IDC: closed form for Poisson, matrix formula, else Monte Carlo."""
    d = _as_distribution(interarrival)
    if d.family.value == "exponential":
        return IdcCurve.poisson(1.0 / d.mean)
    if d.is_phase_type:
        return idc_phase_type(d, t_grid)
    if d.family.value == "deterministic":
        # counts of a stationary lattice differ from lambda*t by a Bernoulli
        # remainder with variance f(1-f), f = frac(lambda*t)
        t = _check_grid(default_t_grid(d.mean, lo=1e-3, hi=1e4, per_decade=200) if t_grid is None else t_grid)
        f = np.mod(t / d.mean, 1.0)
        vals = np.maximum(f * (1 - f) / (t / d.mean), 1e-12)
        return IdcCurve(limit_c2=0.0, source=IdcSource.CLOSED_FORM, rate=1.0 / d.mean, t_grid=t, values=vals)
    grid = default_t_grid(d.mean, lo=1e-2, hi=1e3, per_decade=8) if t_grid is None else t_grid
    return idc_monte_carlo(d, grid, n_paths=max(n_paths, MIN_MC_PATHS), seed=seed)


def idw_from_idc(idc: IdcCurve, c_s2: float) -> IdwCurve:
    return IdwCurve(idc, float(c_s2))


def effective_idw_surrogate(idc: IdcCurve, rho: float, c_s2: float) -> IdwCurve:
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    return IdwCurve(idc, float(c_s2), float(rho))


def write_idc_csv(curve: IdcCurve, path, t_grid=None):
    """Tabulate a curve to CSV (``t, idc[, stderr]``)."""
    if t_grid is None:
        t_grid = curve.t_grid if curve.t_grid is not None else default_t_grid(1.0 / curve.rate, 1e-2, 1e3, 10)
    t, v = curve.tabulate(t_grid)
    meta = {"rate": curve.rate, "limit_c2": curve.limit_c2, "source": curve.source.value}
    if curve.stderr is not None and curve.t_grid is not None and np.array_equal(t, curve.t_grid):
        return csvio.write(path, IDC_SCHEMA, ["t", "idc", "stderr"], zip(t, v, curve.stderr), meta)
    return csvio.write(path, IDC_SCHEMA, ["t", "idc"], zip(t, v), meta)


def read_idc_csv(path, rate: float | None = None, limit_c2: float | None = None) -> IdcCurve:
    meta, rows = csvio.read(path, IDC_SCHEMA)
    if not rows:
        raise ParameterError(f"{path}: no rows")
    try:
        t = np.array([float(r["t"]) for r in rows])
        v = np.array([float(r["idc"]) for r in rows])
        se = np.array([float(r["stderr"]) for r in rows]) if rows[0].get("stderr") not in (None, "") else None
    except (KeyError, ValueError) as exc:
        raise ParameterError(f"{path}: malformed IDC table ({exc})") from None
    rate = float(rate if rate is not None else meta.get("rate", 1.0))
    limit = float(limit_c2 if limit_c2 is not None else meta.get("limit_c2", v[-1]))
    if abs(v[-1] - limit) > 0.01 * max(limit, 1e-12):
        warnings.warn(
            f"{path}: tabulated IDC at t={t[-1]:g} is {v[-1]:.4g}, more than 1% from its limit {limit:.4g}",
            stacklevel=2,
        )
    return IdcCurve(limit_c2=limit, source=IdcSource.TABULATED, rate=rate, t_grid=t, values=v, stderr=se)
