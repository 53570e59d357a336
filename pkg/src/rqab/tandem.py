"""Two stations in series: propagate the arrival IDC through a FIFO GI/GI/1 station.

The departure IDC of station 1 is a time-varying convex combination of its
arrival IDC and the IDC of its service process run at the arrival rate.  The
result feeds the refined solver for station 2 in place of a renewal IDC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .dist import Distribution
from .exceptions import ParameterError
from .renewal import IdcCurve, IdcSource, default_t_grid, idc_for
from .rqcore import SQRT2, QueueModel, RqSolution, _as_dist, make_model, solve_refined_rq
from .wck import WckSurface

__all__ = ["weight_wstar", "TandemSpec", "make_tandem", "departure_idc", "downstream_model", "solve_tandem_rq"]

_SERIES_MAX_U = 0.1
# coefficients of x, x^3, ..., x^11 in w*(x^2), times sqrt(pi/2)
_ODD = np.array([4 / 3, 2 / 15, -1 / 210, 1 / 3780, -1 / 66528, 1 / 1235520])


def weight_wstar(u):
    """Heavy-traffic weight ``w*(u)`` on arrival variability, increasing from 0 to 1."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(np.isnan(u)):
        raise ParameterError("w* needs u >= 0")
    out = np.zeros(u.shape)
    small = (u > 0) & (u < _SERIES_MAX_U)
    big = u >= _SERIES_MAX_U
    if small.any():
        x = np.sqrt(u[small])
        odd = sum(c * x ** (2 * i + 1) for i, c in enumerate(_ODD))
        out[small] = math.sqrt(2 / math.pi) * odd - 0.5 * u[small]
    if big.any():
        v = u[big]
        x = np.sqrt(v)
        pdf = np.exp(-0.5 * v) / math.sqrt(2 * math.pi)
        tail = 2 * pdf * x * (1 + v) - (v * v + 2 * v - 1) * special.erfc(x / SQRT2)
        out[big] = 1.0 - 0.5 / v + tail / (2 * v)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class TandemSpec:
    """Station-1 variability descriptors plus the station-2 model.

    ``service_idc1`` is the IDC of station 1's service renewal process with
    interrenewal times rescaled to mean ``1/lam``.  ``upstream`` optionally
    keeps the full station-1 model for simulation.
    """

    lam: float
    rho1: float
    arrival_idc1: IdcCurve
    service_idc1: IdcCurve
    queue2: QueueModel
    upstream: QueueModel | None = None

    def __post_init__(self):
        if not 0 < self.rho1 < 1:
            raise ParameterError(f"upstream load must lie in (0, 1), got {self.rho1}")
        if not self.c_x1 > 0:
            raise ParameterError("station 1 needs positive total variability")
        if abs(self.queue2.lam - self.lam) > 1e-9 * self.lam:
            raise ParameterError("station 2 must see the station-1 throughput")

    @property
    def c_a1(self) -> float:
        return self.arrival_idc1.limit_c2

    @property
    def c_s1(self) -> float:
        return self.service_idc1.limit_c2

    @property
    def c_x1(self) -> float:
        return self.c_a1 + self.c_s1


def make_tandem(lam: float, interarrival1, service1, mu1: float = 1.0, service2="exponential",
                patience2="exponential", alpha: float = 1.0, mu2: float = 1.0) -> TandemSpec:
    """Tandem from distribution shapes; both IDCs of station 1 are computed by the renewal module."""
    up = make_model(lam, mu1, alpha=1.0, interarrival=interarrival1, service=service1)
    if up.rho >= 1:
        raise ParameterError(f"upstream load must be below one, got {up.rho}")
    svc_at_rate = _as_dist(service1).scaled(1.0 / lam)
    i_s = idc_for(svc_at_rate)
    down = make_model(lam, mu2, alpha=alpha, service=service2, patience=patience2,
                      arrival_idc=IdcCurve.poisson(lam))
    return TandemSpec(lam, up.rho, up.arrival_idc, i_s, down, up)


def departure_idc(spec: TandemSpec, t_grid=None) -> IdcCurve:
    """``I_d(t) = w(t) I_a1(t) + (1 - w(t)) I_s1(t)`` with ``w(t) = w*((1-rho1)^2 lam t / (rho1 c_x1^2))``."""
    a, s = spec.arrival_idc1, spec.service_idc1
    if a.constant is not None and s.constant is not None and a.constant == s.constant:
        return IdcCurve.constant_curve(a.constant, spec.lam)
    t = default_t_grid(1.0 / spec.lam, lo=1e-4, hi=1e6, per_decade=40) if t_grid is None else np.asarray(t_grid)
    w = weight_wstar((1 - spec.rho1) ** 2 * spec.lam * t / (spec.rho1 * spec.c_x1))
    vals = w * a(t) + (1 - w) * s(t)
    return IdcCurve(limit_c2=spec.c_a1, source=IdcSource.TABULATED, rate=spec.lam, t_grid=t, values=vals)


def downstream_model(spec: TandemSpec, t_grid=None) -> QueueModel:
    """Station-2 model whose arrival IDC is the propagated departure IDC."""
    q = spec.queue2
    return QueueModel(q.lam, q.mu, q.c_s2, departure_idc(spec, t_grid), q.patience, q.alpha, q.service, None)


def solve_tandem_rq(spec: TandemSpec, wck: WckSurface, b: float = SQRT2, strict: bool = False) -> RqSolution:
    return solve_refined_rq(downstream_model(spec), wck, b, strict)
