"""Steady-state Robust Queueing fixed points for single-server queues with abandonment.

Both algorithms solve ``z = Psi(z)`` where ``Psi(z)`` is the supremum over a
time horizon of a drift term plus ``b`` standard deviations of a variance
surrogate.  ``Psi`` is nonincreasing in ``z``, so the fixed point is unique
and found by bisection; the inner supremum is a one-dimensional search in
``log u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special

from .dist import Distribution, DistributionSpec, Family, ZeroExpansion, make_distribution
from .exceptions import BracketError, CalibrationError, ParameterError
from .renewal import IdcCurve, IdwCurve, effective_idw_surrogate, idc_for, idw_from_idc
from .wck import ParameterTuple, WckSurface, scale_map

__all__ = [
    "Algorithm",
    "QueueModel",
    "RqSolution",
    "DerivedMeasures",
    "make_model",
    "solve_first_rq",
    "solve_refined_rq",
    "first_rq_map",
    "refined_rq_map",
    "solve",
    "psi_constant",
    "calibrate_b_first",
    "calibrate_b_refined",
    "calibrated_b",
    "heavy_traffic_root",
    "effective_idw_approx",
    "derived_measures",
    "SQRT2",
]

SQRT2 = math.sqrt(2.0)
Z_TOL = 1e-9
U_MIN = 1e-8
SCAN_PER_DECADE = 24
MAX_DOUBLINGS = 200


class Algorithm(str, Enum):
    FIRST = "first"
    REFINED = "refined"


def _as_dist(d) -> Distribution:
    if isinstance(d, Distribution):
        return d
    if isinstance(d, str):
        return make_distribution({"family": d})
    if isinstance(d, (dict, DistributionSpec)):
        return make_distribution(d)
    raise ParameterError(f"cannot interpret {d!r} as a distribution")


@dataclass(frozen=True, eq=False)
class QueueModel:
    """GI/GI/1+GI primitives.

    ``patience`` is the base law with mean one; the actual patience time is
    ``D / alpha``.  ``service`` and ``interarrival`` are optional and only
    consulted by formulas that need the full law (exact formula, simulation).
    """

    lam: float
    mu: float
    c_s2: float
    arrival_idc: IdcCurve
    patience: Distribution
    alpha: float
    service: Distribution | None = None
    interarrival: Distribution | None = None

    def __post_init__(self):
        for name in ("lam", "mu", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive and finite, got {v}")
        if not (self.c_s2 >= 0 and math.isfinite(self.c_s2)):
            raise ParameterError(f"c_s2 must be nonnegative, got {self.c_s2}")
        if abs(self.patience.mean - 1.0) > 1e-9:
            raise ParameterError(f"patience base law must have mean 1, got {self.patience.mean}")
        if abs(self.arrival_idc.rate - self.lam) > 1e-9 * self.lam:
            raise ParameterError(f"arrival IDC rate {self.arrival_idc.rate} differs from lambda {self.lam}")
        if self.service is not None and abs(self.service.mean * self.mu - 1.0) > 1e-9:
            raise ParameterError("service law mean must equal 1/mu")
        if self.service is not None and abs(self.service.scv - self.c_s2) > 1e-9 * max(1.0, self.c_s2):
            raise ParameterError("c_s2 disagrees with the service law")
        if self.interarrival is not None and abs(self.interarrival.mean * self.lam - 1.0) > 1e-9:
            raise ParameterError("interarrival law mean must equal 1/lambda")

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def c_a2(self) -> float:
        return self.arrival_idc.limit_c2

    @cached_property
    def zero_exp(self) -> ZeroExpansion:
        return self.patience.zero_expansion()

    @property
    def is_poisson(self) -> bool:
        c = self.arrival_idc.constant
        poisson_idc = c is not None and abs(c - 1.0) <= 1e-12
        return poisson_idc and (self.interarrival is None or self.interarrival.family is Family.EXPONENTIAL)

    @property
    def has_exponential_service(self) -> bool:
        return self.service is not None and self.service.family is Family.EXPONENTIAL

    def sf(self, z):
        """Patience survival ``Fbar_alpha(z)``."""
        return self.patience.sf(self.alpha * np.asarray(z, dtype=float))

    def cdf(self, z):
        return self.patience.cdf(self.alpha * np.asarray(z, dtype=float))

    def with_lam(self, lam: float) -> "QueueModel":
        """Same model at another arrival rate (the IDC is reused in rate-one time)."""
        idc = self.arrival_idc
        if idc.constant is not None:
            new_idc = IdcCurve(idc.limit_c2, idc.source, lam, constant=idc.constant)
        else:
            scale = idc.rate / lam
            new_idc = IdcCurve(idc.limit_c2, idc.source, lam, idc.t_grid * scale, idc.values, idc.stderr)
        inter = None if self.interarrival is None else self.interarrival.scaled(1.0 / lam)
        return QueueModel(lam, self.mu, self.c_s2, new_idc, self.patience, self.alpha, self.service, inter)

    def with_alpha(self, alpha: float) -> "QueueModel":
        return QueueModel(self.lam, self.mu, self.c_s2, self.arrival_idc, self.patience, alpha,
                          self.service, self.interarrival)

    def describe(self) -> dict:
        out = {"lambda": self.lam, "mu": self.mu, "alpha": self.alpha, "c_s2": self.c_s2,
               "c_a2": self.c_a2, "patience": self.patience.to_dict()}
        if self.service is not None:
            out["service"] = self.service.to_dict()
        if self.interarrival is not None:
            out["interarrival"] = self.interarrival.to_dict()
        return out


def make_model(lam: float, mu: float = 1.0, alpha: float | None = None, interarrival="exponential",
               service="exponential", patience="exponential", arrival_idc: IdcCurve | None = None,
               idc_grid=None, n_paths: int = 20_000, seed: int = 0) -> QueueModel:
    """Build a model from distribution shapes.

    Interarrival and service laws are rescaled to means ``1/lam`` and ``1/mu``.
    If ``alpha`` is omitted it is read off the patience mean.
    """
    if not (lam > 0 and mu > 0):
        raise ParameterError("lam and mu must be positive")
    inter = _as_dist(interarrival).scaled(1.0 / lam)
    svc = _as_dist(service).scaled(1.0 / mu)
    pat = _as_dist(patience)
    if alpha is None:
        alpha = 1.0 / pat.mean
    base = pat.scaled(1.0)
    idc = arrival_idc if arrival_idc is not None else idc_for(inter, idc_grid, n_paths=n_paths, seed=seed)
    return QueueModel(float(lam), float(mu), svc.scv, idc, base, float(alpha), svc, inter)


@dataclass(frozen=True)
class RqSolution:
    z: float
    u_star: float
    residual: float
    iterations: int
    b_used: float
    algorithm: Algorithm
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"z": self.z, "u_star": self.u_star, "residual": self.residual, "iterations": self.iterations,
                "b_used": self.b_used, "algorithm": self.algorithm.value}


@dataclass(frozen=True)
class DerivedMeasures:
    p_abandon: float
    mean_wait_served: float
    mean_queue_effective: float

    def to_dict(self) -> dict:
        return {"p_abandon": self.p_abandon, "mean_wait_served": self.mean_wait_served,
                "mean_queue_effective": self.mean_queue_effective}


# -- inner supremum --------------------------------------------------------------


def _supremum(slope: float, root, b: float) -> tuple[float, float]:
    """``sup_{u>=0} slope*u + b*sqrt(root(u))`` and its maximizer.

    ``root`` is vectorized, nonnegative and grows at most linearly.  Returns
    ``inf`` when the linear part does not pull the objective down.
    """
    if b == 0.0 or slope == -math.inf:
        return (0.0, 0.0) if slope <= 0 else (math.inf, math.inf)
    if slope >= 0:
        return math.inf, math.inf

    def f(u):
        return slope * u + b * np.sqrt(np.maximum(root(u), 0.0))

    # grow the bracket until three consecutive doublings decrease the objective
    U = 1.0
    prev = f(U)
    falls = 0
    for _ in range(MAX_DOUBLINGS):
        U *= 2.0
        cur = f(U)
        falls = falls + 1 if cur < prev else 0
        prev = cur
        if falls >= 3:
            break
    else:
        raise BracketError(f"supremum bracket did not close (slope={slope:.3g})")

    lo = math.log(U_MIN)
    hi = math.log(U)
    n = max(16, int((hi - lo) / math.log(10) * SCAN_PER_DECADE))
    logu = np.linspace(lo, hi, n + 1)
    vals = f(np.exp(logu))
    i = int(np.argmax(vals))
    a, c = logu[max(i - 1, 0)], logu[min(i + 1, n)]
    res = optimize.minimize_scalar(lambda x: -float(f(math.exp(x))), bounds=(a, c), method="bounded",
                                   options={"xatol": 1e-10})
    best_u, best = math.exp(logu[i]), float(vals[i])
    if -res.fun > best:
        best_u, best = math.exp(res.x), float(-res.fun)
    if best <= 0.0:
        return 0.0, 0.0
    return best, best_u


def _fixed_point(psi, z_start: float, tol: float = Z_TOL, max_iter: int = 400):
    """Bisection for ``psi(z) = z`` with ``psi`` nonincreasing.

    ``psi`` returns ``(value, maximizer)``.  Stops once the bracket is below
    ``tol`` and the residual is below ``tol * max(1, z)``, or when the
    bracket cannot shrink further in floating point.
    """
    v0, u0 = psi(0.0)
    if v0 <= 0.0:
        return 0.0, u0, abs(v0), 1
    hi = max(z_start, 1e-6)
    it = 0
    while True:
        vh, _ = psi(hi)
        it += 1
        if vh < hi:
            break
        hi *= 2.0
        if it > MAX_DOUBLINGS:
            raise BracketError("fixed-point bracket did not close")
    lo = 0.0
    z, val, u = hi, vh, 0.0
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val, u = psi(mid)
        it += 1
        z = mid
        if val >= mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol and abs(val - mid) <= tol * max(1.0, mid):
            break
    if not math.isfinite(val):
        z = hi
        val, u = psi(hi)
    return z, u, abs(val - z), it


def _start(model: QueueModel) -> float:
    """Initial upper guess: fluid delay in overload plus one mean patience."""
    xi = 0.0
    if model.rho > 1:
        xi = model.patience.quantile((model.rho - 1.0) / model.rho) / model.alpha
    return xi + 1.0 / model.alpha


# -- first algorithm ---------------------------------------------------------------


def first_rq_map(model: QueueModel, idw: IdwCurve | None = None, b: float = SQRT2):
    """``z -> (Psi(z), maximizer)`` for the first algorithm."""
    if idw is None:
        idw = idw_from_idc(model.arrival_idc, model.c_s2)
    rho, lam, mu = model.rho, model.lam, model.mu

    def root(u):
        return rho * u / mu * idw.rate_one(lam * u)

    def psi(z):
        fbar = float(model.sf(z))
        slope = rho - 1.0 / fbar if fbar > 0 else -math.inf
        return _supremum(slope, root, b)

    return psi


def _check_b(b):
    if not (b >= 0 and math.isfinite(b)):
        raise ParameterError(f"b must be nonnegative and finite, got {b}")


def solve_first_rq(model: QueueModel, idw: IdwCurve | None = None, b: float = SQRT2) -> RqSolution:
    """Fixed point of ``z = sup_u { rho u - u/Fbar(z) + b sqrt(rho u I_w(lam u)/mu) }``.

    ``idw`` defaults to ``I_a + c_s^2`` built from the model.
    """
    _check_b(b)
    z, u, resid, it = _fixed_point(first_rq_map(model, idw, b), _start(model))
    return RqSolution(float(z), float(u), float(resid), it, float(b), Algorithm.FIRST,
                      {"rho": model.rho, "alpha": model.alpha})


# -- refined algorithm --------------------------------------------------------------


def refined_coordinates(model: QueueModel, wck: WckSurface, strict: bool = False) -> dict:
    """``c``, the surface coordinate ``c_tilde`` (clamped) and ``tau`` for a model."""
    ze = model.zero_exp
    if wck.k != ze.k:
        raise ParameterError(f"surface is for k={wck.k} but the patience law has k={ze.k}")
    h = ze.h
    c = model.alpha ** (-h) * (model.rho - 1.0)
    xi = ParameterTuple(c, ze.k, model.mu, model.c_a2, model.c_s2, ze.coeff)
    c_tilde, tau = scale_map(xi)
    c_used, clamped = wck.clamp_c(c_tilde, strict)
    return {"c": c, "c_tilde": c_tilde, "c_tilde_used": c_used, "clamped": clamped, "tau": tau,
            "time_factor": model.alpha ** (2 * h) * tau}


def _effective_idw(model: QueueModel, wck: WckSurface, strict: bool):
    coords = refined_coordinates(model, wck, strict)
    idw = effective_idw_surrogate(model.arrival_idc, model.rho, model.c_s2)
    c_used, tf = coords["c_tilde_used"], coords["time_factor"]

    def curve(t):
        return idw(t) * wck(c_used, tf * np.asarray(t, dtype=float))

    return curve, coords


def effective_idw_approx(model: QueueModel, wck: WckSurface, t, strict: bool = False):
    """Effective IDW of the served work: load-adjusted IDW times the variance-reduction factor."""
    curve, _ = _effective_idw(model, wck, strict)
    return curve(t)


def refined_rq_map(model: QueueModel, wck: WckSurface, b: float = SQRT2, strict: bool = False):
    """``(z -> (Psi(z), maximizer), coordinates)`` for the refined algorithm."""
    idw_eff, coords = _effective_idw(model, wck, strict)
    lam, mu, rho = model.lam, model.mu, model.rho

    def psi(z):
        fbar = float(model.sf(z))
        if fbar <= 0:
            return 0.0, 0.0
        scale = lam * fbar / mu**2

        def root(s):
            return idw_eff(s) * scale * s

        return _supremum(rho * fbar - 1.0, root, b)

    return psi, coords


def solve_refined_rq(model: QueueModel, wck: WckSurface, b: float = SQRT2, strict: bool = False) -> RqSolution:
    """Fixed point of ``z = sup_s { Lambda(s)/mu - s + b sqrt(V(s)) }`` with the variance-reduction factor.

    ``Lambda(s) = lam Fbar(z) s`` and
    ``V(s) = I_hat(s) w(c_tilde, alpha^{2h} tau s) Lambda(s) / mu^2``.
    A ``c_tilde`` off the surface is clamped to its edge (flagged in the
    diagnostics) or, with ``strict``, raises ``CoverageError``.
    """
    _check_b(b)
    psi, coords = refined_rq_map(model, wck, b, strict)
    z, u, resid, it = _fixed_point(psi, _start(model))
    coords.update(rho=model.rho, alpha=model.alpha)
    return RqSolution(float(z), float(u), float(resid), it, float(b), Algorithm.REFINED, coords)


# -- heavy-traffic constants and calibration ----------------------------------------------


def psi_constant(c: float, k: int, Fk0: float = 1.0, mu: float = 1.0, gamma_equals_h: bool = True) -> float:
    """Mean of the density proportional to ``exp(g x - mu Fk0 x^{k+1}/(k+1)!)`` on x > 0.

    ``g = c mu`` when the patience scale matches the heavy-traffic exponent,
    otherwise ``g = 0``.
    """
    if int(k) != k or k < 1 or not (Fk0 > 0 and mu > 0):
        raise ParameterError("need integer k >= 1, Fk0 > 0, mu > 0")
    g = c * mu if gamma_equals_h else 0.0
    m = mu * Fk0 / math.factorial(k + 1)

    def expo(x):
        return g * x - m * x ** (k + 1)

    peak = (g / (m * (k + 1))) ** (1.0 / k) if g > 0 else 0.0
    top = expo(peak)
    width = 1.0 / abs(g) if g < 0 else (1.0 / (m * (k + 1))) ** (1.0 / (k + 1))
    upper = peak + width
    while expo(upper) > top - 60.0:
        upper = peak + 2.0 * (upper - peak)
    pts = [p for p in (peak, peak + width) if 0 < p < upper]
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=400, points=pts or None)
    den = integrate.quad(lambda x: math.exp(expo(x) - top), 0.0, upper, **opts)[0]
    num = integrate.quad(lambda x: x * math.exp(expo(x) - top), 0.0, upper, **opts)[0]
    return num / den


def calibrate_b_first(c: float, k: int, Fk0: float = 1.0) -> float:
    """``b`` matching the first algorithm's heavy-traffic root to the exact constant (``mu = 1``)."""
    psi = psi_constant(c, k, Fk0, 1.0, True)
    return math.sqrt(2.0 * abs(-c * psi + Fk0 / math.factorial(k) * psi ** (k + 1)))


def truncated_normal_b(c: float) -> float:
    """Closed form of ``calibrate_b_first(c, 1, 1)``."""
    mills = math.exp(special.log_ndtr(c) * -1.0 - 0.5 * c * c - 0.5 * math.log(2 * math.pi))
    return math.sqrt(2.0 * (c + mills) * mills)


def _base_fk0(k: int) -> float:
    # exponential (k = 1) or Erlang-k with mean one: F(x) ~ (k x)^k / k!
    return float(k**k)


def heavy_traffic_root(c: float, k: int, b: float, Fk0: float, c_x2: float = 2.0, mu: float = 1.0,
                       wck: WckSurface | None = None, strict: bool = False) -> float:
    """Positive root ``Z`` of ``Z = sup_u {(c - beta Z^k) u + b sqrt(c_x2/mu w(tau u) u)}``.

    Without a surface the reduction factor is one and the root solves
    ``-c Z + beta Z^{k+1} = c_x2 b^2 / (4 mu)``.
    """
    beta = Fk0 / math.factorial(k)
    if wck is None:
        rhs = c_x2 * b * b / (4.0 * mu)
        f = lambda z: beta * z ** (k + 1) - c * z - rhs  # noqa: E731
        hi = max(1.0, (max(c, 0.0) / beta) ** (1.0 / k))
        while f(hi) < 0:
            hi *= 2.0
        return optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)
    c_tilde, tau = scale_map(ParameterTuple(c, k, mu, c_x2 / 2.0, c_x2 / 2.0, Fk0))
    c_used, _ = wck.clamp_c(c_tilde, strict)

    def root(u):
        return c_x2 / mu * wck(c_used, tau * u) * u

    def psi(z):
        return _supremum(c - beta * z**k, root, b)

    start = (max(c, 0.0) / beta) ** (1.0 / k) + 1.0
    return _fixed_point(psi, start, tol=1e-12)[0]


def calibrate_b_refined(c: float, k: int, wck: WckSurface, lo: float = 0.1, hi: float = 5.0,
                        tol: float = 1e-10, strict: bool = False) -> float:
    """``b`` whose refined heavy-traffic root equals the exact constant for the base model.

    The base model has ``mu = 1``, ``c_x^2 = 2`` and exponential (``k = 1``)
    or Erlang-``k`` patience with mean one.
    """
    Fk0 = _base_fk0(k)
    target = psi_constant(c, k, Fk0, 1.0, True)
    seen: list[tuple[float, float]] = []

    def gap(b):
        z = heavy_traffic_root(c, k, b, Fk0, 2.0, 1.0, wck, strict)
        for b0, z0 in seen:
            if (b - b0) * (z - z0) < -1e-9 * max(1.0, abs(z0)):
                raise CalibrationError(f"heavy-traffic root not increasing in b near b={b:.6g} (c={c:.6g}, k={k})")
        seen.append((b, z))
        return z - target

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo * g_hi > 0:
        err = CalibrationError(
            f"no sign change for b in [{lo}, {hi}] at c={c:.6g}, k={k}: "
            f"root-target={g_lo:.4g} at b={lo}, {g_hi:.4g} at b={hi}, target={target:.6g}"
        )
        err.gaps = (g_lo, g_hi)
        raise err
    return optimize.brentq(gap, lo, hi, xtol=tol, rtol=1e-14)


def calibrated_b(model: QueueModel, algorithm: Algorithm | str, wck: WckSurface | None = None) -> float:
    """Calibrated ``b`` for a model after rescaling time so that ``mu = 1``."""
    algorithm = Algorithm(algorithm)
    ze = model.zero_exp
    alpha = model.alpha / model.mu
    c = alpha ** (-ze.h) * (model.rho - 1.0)
    if algorithm is Algorithm.FIRST:
        return calibrate_b_first(c, ze.k, ze.coeff)
    if wck is None:
        raise ParameterError("refined calibration needs a w surface")
    try:
        return calibrate_b_refined(c, ze.k, wck)
    except CalibrationError as exc:
        # deep overload: the fluid root alone already exceeds the target, so
        # the closest match is the smallest b in the bracket
        if getattr(exc, "gaps", (0.0, 0.0))[0] > 0:
            return 0.1
        raise


def solve(model: QueueModel, algorithm: Algorithm | str = Algorithm.REFINED, b: float | str = SQRT2,
          wck: WckSurface | None = None, strict: bool = False) -> RqSolution:
    """Dispatch to either algorithm; ``b='calibrated'`` selects the matched value."""
    algorithm = Algorithm(algorithm)
    if isinstance(b, str):
        if b != "calibrated":
            raise ParameterError(f"b must be a number or 'calibrated', got {b!r}")
        b = calibrated_b(model, algorithm, wck)
    if algorithm is Algorithm.FIRST:
        return solve_first_rq(model, None, b)
    if wck is None:
        raise ParameterError("the refined algorithm needs a w surface")
    return solve_refined_rq(model, wck, b, strict)


def derived_measures(solution: RqSolution, model: QueueModel) -> DerivedMeasures:
    z = solution.z
    if z < 0:
        raise ParameterError("z must be nonnegative")
    p = float(np.clip(model.cdf(z), 0.0, 1.0))
    served = model.rho * (1.0 - p)
    half = (model.c_s2 + 1.0) / 2.0
    wait = max(0.0, z / served - half / model.mu) if served > 0 else 0.0
    queue = max(0.0, model.mu * z - served * half)
    return DerivedMeasures(p, wait, queue)
