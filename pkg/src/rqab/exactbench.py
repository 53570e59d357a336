"""Exact M/M/1+GI mean virtual wait and the classical benchmark approximations.

All four integral formulas share the shape ``int x e^{E(x)} dx / (K + int e^{E(x)} dx)``
with a concave exponent ``E``; they are evaluated around the peak of ``E``
with the peak value factored out, on a domain cut where ``E`` has dropped
60 nats.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import InapplicableError
from .rqcore import QueueModel

__all__ = [
    "Method",
    "BenchmarkResult",
    "exact_mm1_gi",
    "wg_approx",
    "hazard_rate_approx",
    "hg_approx",
    "all_benchmarks",
]

DROP = 60.0


class Method(str, Enum):
    EXACT = "ExactMM1GI"
    WG = "WG"
    HAZARD_RATE = "HazardRate"
    HG = "HG"
    HG_MODIFIED = "HGModified"


@dataclass(frozen=True)
class BenchmarkResult:
    method: Method
    value: float
    applicable: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return {"method": self.method.value, "value": self.value, "applicable": self.applicable, "note": self.note}


def _H(model: QueueModel, x):
    """``int_0^x Fbar_alpha``."""
    a = model.alpha
    return model.patience.integrated_sf(a * np.asarray(x, dtype=float)) / a


def _laplace_ratio(expo, slope, lead=0.0, epsrel=1e-10, x_max=None):
    """``(int x e^E, lead + int e^E)`` ratio for a concave exponent ``E`` with ``E(0) = 0``.

    ``slope(x)`` is ``E'(x)``, nonincreasing.  ``lead`` is an additive
    constant in the denominator, given on the unscaled level.
    """
    # peak of E: root of the derivative, or the origin when it starts negative
    if slope(0.0) <= 0:
        peak = 0.0
    else:
        hi = 1.0
        while slope(hi) > 0:
            hi *= 2.0
            if x_max is not None and hi >= x_max:
                hi = x_max
                break
        peak = hi if slope(hi) > 0 else optimize.brentq(slope, 0.0, hi, xtol=1e-12 * hi, rtol=1e-14)
    top = float(expo(peak))
    # grow outward from a tiny step until the exponent has dropped DROP nats
    step = 1e-6 * max(1.0, peak)
    upper = peak + step
    while expo(upper) > top - DROP:
        upper = peak + 2.0 * (upper - peak)
        if x_max is not None and upper >= x_max:
            upper = x_max
            break
    lower = peak - step
    while lower > 0 and expo(lower) > top - DROP:
        lower = peak - 2.0 * (peak - lower)
    lower = max(lower, 0.0)
    pieces = np.unique(np.concatenate([np.linspace(lower, peak, 9), np.linspace(peak, upper, 33)]))

    def f0(x):
        return math.exp(float(expo(x)) - top)

    def f1(x):
        return x * f0(x)

    opts = dict(epsabs=0.0, epsrel=epsrel, limit=500)
    den = sum(integrate.quad(f0, a, b, **opts)[0] for a, b in zip(pieces[:-1], pieces[1:]))
    num = sum(integrate.quad(f1, a, b, **opts)[0] for a, b in zip(pieces[:-1], pieces[1:]))
    if lead:
        den += math.exp(math.log(lead) - top) if top < 700 else 0.0
    return num / den


def exact_mm1_gi(model: QueueModel, epsrel: float = 1e-10) -> float:
    """Mean virtual waiting time of M/M/1+GI."""
    if not model.is_poisson:
        raise InapplicableError("exact formula needs Poisson arrivals")
    if not (model.has_exponential_service and abs(model.c_s2 - 1.0) < 1e-12):
        raise InapplicableError("exact formula needs exponential service")
    mu, rho = model.mu, model.rho

    def expo(x):
        return mu * (rho * _H(model, x) - x)

    def slope(x):
        return mu * (rho * float(model.sf(x)) - 1.0)

    return _laplace_ratio(expo, slope, lead=1.0 / model.lam, epsrel=epsrel)


def _phi_over_Phi(x: float) -> float:
    """``phi(x) / Phi(x)`` without underflow."""
    return math.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - float(special.log_ndtr(x)))


def wg_approx(model: QueueModel) -> BenchmarkResult:
    """Diffusion approximation built on the patience density at zero."""
    try:
        ze = model.zero_exp
    except Exception as exc:  # noqa: BLE001 - unsupported patience laws
        return BenchmarkResult(Method.WG, math.nan, False, f"requires f(0)>0 ({exc})")
    if ze.k != 1:
        return BenchmarkResult(Method.WG, math.nan, False, "requires f(0)>0; use the hazard-rate approximation")
    f0, mu, rho, a = ze.coeff, model.mu, model.rho, model.alpha
    c = (rho - 1.0) / math.sqrt(a)
    cx2 = rho * model.c_a2 + min(rho, 1.0) * model.c_s2
    sigma = math.sqrt(cx2 / (2.0 * mu * f0))
    arg = -math.sqrt(2.0 * mu) * c / math.sqrt(f0 * cx2)
    # phi(arg) / (1 - Phi(arg)) = phi(-arg) / Phi(-arg)
    val = (c / f0 + _phi_over_Phi(-arg) * sigma) / math.sqrt(a)
    return BenchmarkResult(Method.WG, max(val, 0.0), True, "")


def hazard_rate_approx(model: QueueModel, epsrel: float = 1e-10) -> BenchmarkResult:
    """Approximation keeping the whole patience law through ``log Fbar``."""
    mu, rho, a = model.mu, model.rho, model.alpha
    cx2 = model.c_a2 + model.c_s2
    k = 2.0 * mu / cx2
    base = model.patience
    note = ""
    sup_edge = math.inf

    def logsf(x):
        return float(base.logsf(a * x))

    def expo(x):
        return k * (base.integrated_logsf(a * x) / a + (rho - 1.0) * x)

    def slope(x):
        return k * (logsf(x) + rho - 1.0)

    # if the tail vanishes at finite x, stop short of it
    probe = 1.0 / a
    while math.isfinite(logsf(probe)) and probe < 1e12 / a:
        probe *= 2.0
    if not math.isfinite(logsf(probe)):
        sup_edge = probe
        note = "integration truncated before the patience support edge"
        warnings.warn(note, stacklevel=2)
    x_max = None if math.isinf(sup_edge) else 0.999 * sup_edge
    val = _laplace_ratio(expo, slope, 0.0, epsrel, x_max)
    return BenchmarkResult(Method.HAZARD_RATE, val, True, note)


def hg_approx(model: QueueModel, modified_for_gi: bool = False, epsrel: float = 1e-10) -> BenchmarkResult:
    """Universal M/GI/1+GI approximation; optionally with the arrival SCV plugged in."""
    mu, rho = model.mu, model.rho
    ca2 = model.c_a2 if modified_for_gi else 1.0
    k = 2.0 * mu / ((ca2 + model.c_s2) * min(rho, 1.0))

    def expo(x):
        return k * (rho * _H(model, x) - x)

    def slope(x):
        return k * (rho * float(model.sf(x)) - 1.0)

    val = _laplace_ratio(expo, slope, 0.0, epsrel)
    return BenchmarkResult(Method.HG_MODIFIED if modified_for_gi else Method.HG, val, True, "")


def all_benchmarks(model: QueueModel) -> list[BenchmarkResult]:
    """Every benchmark, with the exact formula marked inapplicable off M/M/1+GI."""
    out = []
    try:
        out.append(BenchmarkResult(Method.EXACT, exact_mm1_gi(model)))
    except InapplicableError as exc:
        out.append(BenchmarkResult(Method.EXACT, math.nan, False, str(exc)))
    out.append(wg_approx(model))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out.append(hazard_rate_approx(model))
    out.append(hg_approx(model, False))
    out.append(hg_approx(model, True))
    return out
