"""Parametric distributions for interarrival, service and patience times.

Five families are supported: exponential, Erlang-m, balanced two-phase
hyperexponential, lognormal and deterministic.  Besides the usual
evaluators, each distribution knows

* its local behaviour at the origin (``zero_expansion``), which fixes the
  heavy-traffic exponent of an abandonment queue with that patience law;
* its integrated tail ``E[min(X, y)]`` and integrated log-tail, used by the
  exact and benchmark formulas;
* how to sample its stationary-excess law, used to start renewal processes
  in equilibrium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import (
    ParameterError,
    UnsupportedDistributionError,
    UnsupportedPatienceError,
)

__all__ = [
    "Family",
    "DistributionSpec",
    "ZeroExpansion",
    "Distribution",
    "make_distribution",
    "zero_expansion",
    "quantile",
    "exponential",
    "erlang",
    "hyperexp2",
    "lognormal",
    "deterministic",
    "normalize_patience",
]


class Family(str, Enum):
    EXPONENTIAL = "exponential"
    ERLANG = "erlang"
    HYPEREXP2 = "hyperexp2"
    LOGNORMAL = "lognormal"
    DETERMINISTIC = "deterministic"


_ALIASES = {
    "exp": Family.EXPONENTIAL,
    "m": Family.EXPONENTIAL,
    "markov": Family.EXPONENTIAL,
    "e": Family.ERLANG,
    "h2": Family.HYPEREXP2,
    "hyperexp": Family.HYPEREXP2,
    "hyperexponential": Family.HYPEREXP2,
    "ln": Family.LOGNORMAL,
    "d": Family.DETERMINISTIC,
}


def _parse_family(value) -> Family:
    if isinstance(value, Family):
        return value
    key = str(value).strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    try:
        return Family(key)
    except ValueError:
        raise ParameterError(f"unknown distribution family {value!r}") from None


@dataclass(frozen=True)
class DistributionSpec:
    """Serializable description ``{family, mean, scv?|shape?}``."""

    family: Family
    mean: float = 1.0
    scv: float | None = None
    shape: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", _parse_family(self.family))

    def to_dict(self) -> dict:
        out = {"family": self.family.value, "mean": float(self.mean)}
        if self.scv is not None:
            out["scv"] = float(self.scv)
        if self.shape is not None:
            out["shape"] = int(self.shape)
        return out

    @classmethod
    def from_dict(cls, record: dict) -> "DistributionSpec":
        if "family" not in record:
            raise ParameterError("distribution record needs a 'family' field")
        unknown = set(record) - {"family", "mean", "scv", "shape"}
        if unknown:
            raise ParameterError(f"unknown distribution fields {sorted(unknown)}")
        shape = record.get("shape")
        return cls(
            family=record["family"],
            mean=float(record.get("mean", 1.0)),
            scv=None if record.get("scv") is None else float(record["scv"]),
            shape=None if shape is None else int(shape),
        )


@dataclass(frozen=True)
class ZeroExpansion:
    """``F(x) = coeff / k! * x**k + o(x**k)`` as ``x -> 0``."""

    k: int
    coeff: float

    def __post_init__(self):
        if self.k < 1 or self.coeff <= 0:
            raise ParameterError(f"invalid zero expansion k={self.k}, coeff={self.coeff}")

    @property
    def beta(self) -> float:
        return self.coeff / math.factorial(self.k)

    @property
    def h(self) -> float:
        return self.k / (self.k + 1)


class Distribution:
    """Immutable evaluator bundle for one :class:`DistributionSpec`."""

    def __init__(self, spec: DistributionSpec):
        self.spec = spec
        fam = spec.family
        mean = float(spec.mean)
        if not (mean > 0 and math.isfinite(mean)):
            raise ParameterError(f"mean must be positive and finite, got {mean}")
        self.family = fam
        self._mean = mean

        if fam is Family.EXPONENTIAL:
            self._rate = 1.0 / mean
        elif fam is Family.ERLANG:
            m = spec.shape if spec.shape is not None else 2
            if int(m) != m or m < 1:
                raise ParameterError(f"Erlang shape must be an integer >= 1, got {m}")
            self._m = int(m)
            self._rate = self._m / mean
        elif fam is Family.HYPEREXP2:
            c2 = spec.scv
            if c2 is None or not c2 > 1:
                raise ParameterError(f"balanced hyperexponential needs scv > 1, got {c2}")
            p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
            self._p = np.array([p1, 1.0 - p1])
            self._rates = 2.0 * self._p / mean
        elif fam is Family.LOGNORMAL:
            c2 = spec.scv
            if c2 is None or not c2 > 0:
                raise ParameterError(f"lognormal needs scv > 0, got {c2}")
            self._sigma = math.sqrt(math.log1p(c2))
            self._mu_ln = math.log(mean) - 0.5 * self._sigma**2
        elif fam is Family.DETERMINISTIC:
            pass
        else:  # pragma: no cover - guarded by _parse_family
            raise ParameterError(f"unsupported family {fam}")

    def __repr__(self):
        return f"Distribution({self.spec.to_dict()})"

    def __eq__(self, other):
        return isinstance(other, Distribution) and other.spec == self.spec

    def __hash__(self):
        return hash(self.spec)

    # -- moments -----------------------------------------------------------

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def second_moment(self) -> float:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return 2.0 * self._mean**2
        if fam is Family.ERLANG:
            return self._m * (self._m + 1) / self._rate**2
        if fam is Family.HYPEREXP2:
            return float(2.0 * np.sum(self._p / self._rates**2))
        if fam is Family.LOGNORMAL:
            return math.exp(2 * self._mu_ln + 2 * self._sigma**2)
        return self._mean**2

    @property
    def var(self) -> float:
        return self.second_moment - self._mean**2

    @property
    def scv(self) -> float:
        return self.var / self._mean**2

    @property
    def rate(self) -> float:
        return 1.0 / self._mean

    # -- evaluators --------------------------------------------------------

    def cdf(self, x):
        return -np.expm1(self.logsf(x)) if self.family is not Family.DETERMINISTIC else (
            np.where(np.asarray(x, dtype=float) >= self._mean, 1.0, 0.0)
        )

    def sf(self, x):
        return np.exp(self.logsf(x))

    def logsf(self, x):
        """Log of the complementary CDF, accurate deep into the tail."""
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        fam = self.family
        if fam is Family.EXPONENTIAL:
            out = -self._rate * xp
        elif fam is Family.ERLANG:
            rx = self._rate * xp
            j = np.arange(self._m)
            with np.errstate(divide="ignore", invalid="ignore"):
                lrx = np.log(rx)[..., None]
                terms = np.where(j == 0, 0.0, j * lrx) - special.gammaln(j + 1)
            out = -rx + special.logsumexp(terms, axis=-1)
        elif fam is Family.HYPEREXP2:
            a = np.log(self._p[0]) - self._rates[0] * xp
            b = np.log(self._p[1]) - self._rates[1] * xp
            out = np.logaddexp(a, b)
        elif fam is Family.LOGNORMAL:
            with np.errstate(divide="ignore"):
                zz = (np.log(xp) - self._mu_ln) / self._sigma
            out = special.log_ndtr(-zz)
        else:
            out = np.where(xp < self._mean, 0.0, -np.inf)
        out = np.where(x <= 0, 0.0, out)
        return out if out.ndim else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        fam = self.family
        if fam is Family.EXPONENTIAL:
            out = self._rate * np.exp(-self._rate * xp)
        elif fam is Family.ERLANG:
            m, r = self._m, self._rate
            if m == 1:
                out = r * np.exp(-r * xp)
            else:
                with np.errstate(divide="ignore"):
                    logf = m * math.log(r) + (m - 1) * np.log(xp) - r * xp - math.lgamma(m)
                out = np.exp(logf)
        elif fam is Family.HYPEREXP2:
            out = np.sum(
                (self._p * self._rates)[:, None] * np.exp(-np.outer(self._rates, xp)), axis=0
            ).reshape(xp.shape)
        elif fam is Family.LOGNORMAL:
            with np.errstate(divide="ignore", invalid="ignore"):
                zz = (np.log(xp) - self._mu_ln) / self._sigma
                out = np.exp(-0.5 * zz**2) / (xp * self._sigma * math.sqrt(2 * math.pi))
            out = np.where(xp > 0, out, 0.0)
        else:
            raise UnsupportedDistributionError("deterministic law has no density")
        out = np.where(x < 0, 0.0, out)
        return out if out.ndim else float(out)

    def quantile(self, p: float) -> float:
        """Generalized inverse ``inf{x >= 0 : F(x) >= p}`` for ``p in [0, 1)``."""
        p = float(p)
        if not (0.0 <= p < 1.0):
            raise ParameterError(f"quantile level must lie in [0, 1), got {p}")
        if p == 0.0:
            return 0.0
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return -self._mean * math.log1p(-p)
        if fam is Family.ERLANG:
            return float(special.gammaincinv(self._m, p)) / self._rate
        if fam is Family.LOGNORMAL:
            return math.exp(self._mu_ln + self._sigma * float(special.ndtri(p)))
        if fam is Family.DETERMINISTIC:
            return self._mean
        hi = -math.log1p(-p) / float(self._rates.min())
        return optimize.brentq(
            lambda x: float(self.cdf(x)) - p, 0.0, hi * 1.0000001 + 1e-300, xtol=1e-15, rtol=1e-15
        )

    # -- integrated tails ----------------------------------------------------

    def integrated_sf(self, y):
        """``E[min(X, y)] = int_0^y (1 - F(v)) dv``."""
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        fam = self.family
        if fam is Family.EXPONENTIAL:
            out = -self._mean * np.expm1(-y / self._mean)
        elif fam is Family.ERLANG:
            m, r = self._m, self._rate
            out = (m / r) * special.gammainc(m + 1, r * y) + y * special.gammaincc(m, r * y)
        elif fam is Family.HYPEREXP2:
            out = np.sum(
                (self._p / self._rates)[:, None] * -np.expm1(-np.outer(self._rates, y)), axis=0
            ).reshape(y.shape)
        elif fam is Family.LOGNORMAL:
            with np.errstate(divide="ignore"):
                ly = np.log(y)
            s, m = self._sigma, self._mu_ln
            out = self._mean * special.ndtr((ly - m - s * s) / s) + y * special.ndtr(-(ly - m) / s)
        else:
            out = np.minimum(y, self._mean)
        return out if out.ndim else float(out)

    def integrated_logsf(self, y: float) -> float:
        """``int_0^y log(1 - F(v)) dv`` (closed form for the exponential)."""
        y = float(y)
        if y <= 0:
            return 0.0
        if self.family is Family.EXPONENTIAL:
            return -0.5 * self._rate * y * y
        if self.family is Family.DETERMINISTIC and y > self._mean:
            return -math.inf
        val, _ = integrate.quad(lambda v: float(self.logsf(v)), 0.0, y, limit=200, epsabs=1e-13, epsrel=1e-12)
        return val

    # -- structure -----------------------------------------------------------

    def zero_expansion(self) -> ZeroExpansion:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return ZeroExpansion(1, self._rate)
        if fam is Family.ERLANG:
            return ZeroExpansion(self._m, self._rate**self._m)
        if fam is Family.HYPEREXP2:
            return ZeroExpansion(1, float(np.dot(self._p, self._rates)))
        raise UnsupportedPatienceError(
            f"{fam.value} law has no finite zero-expansion index (F vanishes to all orders at 0)"
        )

    def phase_type(self) -> tuple[np.ndarray, np.ndarray]:
        """Initial vector and sub-generator ``(alpha, T)``."""
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return np.array([1.0]), np.array([[-self._rate]])
        if fam is Family.ERLANG:
            m, r = self._m, self._rate
            T = -r * np.eye(m) + r * np.eye(m, k=1)
            alpha = np.zeros(m)
            alpha[0] = 1.0
            return alpha, T
        if fam is Family.HYPEREXP2:
            return self._p.copy(), np.diag(-self._rates)
        raise UnsupportedDistributionError(f"{fam.value} law is not phase-type")

    @property
    def is_phase_type(self) -> bool:
        return self.family in (Family.EXPONENTIAL, Family.ERLANG, Family.HYPEREXP2)

    def scaled(self, mean: float) -> "Distribution":
        """Same family and shape, new mean."""
        s = self.spec
        return Distribution(DistributionSpec(s.family, float(mean), s.scv, s.shape))

    # -- sampling --------------------------------------------------------------

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return rng.exponential(self._mean, size)
        if fam is Family.ERLANG:
            return rng.gamma(self._m, 1.0 / self._rate, size)
        if fam is Family.HYPEREXP2:
            branch = rng.random(size) >= self._p[0]
            return rng.exponential(1.0, size) / self._rates[branch.astype(np.intp)]
        if fam is Family.LOGNORMAL:
            return rng.lognormal(self._mu_ln, self._sigma, size)
        return np.full(size, self._mean)

    def sample_excess(self, rng: np.random.Generator, size) -> np.ndarray:
        """Stationary-excess draws: uniform fraction of a length-biased draw."""
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return rng.exponential(self._mean, size)
        if fam is Family.HYPEREXP2:
            w1 = self._p[0] / (self._rates[0] * self._mean)
            branch = rng.random(size) >= w1
            return rng.exponential(1.0, size) / self._rates[branch.astype(np.intp)]
        u = rng.random(size)
        if fam is Family.ERLANG:
            return u * rng.gamma(self._m + 1, 1.0 / self._rate, size)
        if fam is Family.LOGNORMAL:
            return u * rng.lognormal(self._mu_ln + self._sigma**2, self._sigma, size)
        return u * self._mean

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return self.spec.to_dict()

    @classmethod
    def from_dict(cls, record: dict) -> "Distribution":
        return cls(DistributionSpec.from_dict(record))


def make_distribution(spec: DistributionSpec | dict) -> Distribution:
    if isinstance(spec, dict):
        spec = DistributionSpec.from_dict(spec)
    return Distribution(spec)


def zero_expansion(dist: Distribution) -> ZeroExpansion:
    return dist.zero_expansion()


def quantile(dist: Distribution, p: float) -> float:
    return dist.quantile(p)


def exponential(mean: float = 1.0) -> Distribution:
    return Distribution(DistributionSpec(Family.EXPONENTIAL, mean))


def erlang(shape: int = 2, mean: float = 1.0) -> Distribution:
    return Distribution(DistributionSpec(Family.ERLANG, mean, shape=shape))


def hyperexp2(scv: float = 4.0, mean: float = 1.0) -> Distribution:
    return Distribution(DistributionSpec(Family.HYPEREXP2, mean, scv=scv))


def lognormal(mean: float = 1.0, scv: float = 1.0) -> Distribution:
    return Distribution(DistributionSpec(Family.LOGNORMAL, mean, scv=scv))


def deterministic(mean: float = 1.0) -> Distribution:
    return Distribution(DistributionSpec(Family.DETERMINISTIC, mean))


def normalize_patience(dist: Distribution) -> tuple[Distribution, float]:
    """Split a patience law into ``(base law with mean 1, alpha = 1/mean)``.

    Lognormal and deterministic patience are rejected: the first vanishes to
    all orders at zero, the second has an atom and bounded support.
    """
    if dist.family in (Family.LOGNORMAL, Family.DETERMINISTIC):
        raise UnsupportedPatienceError(
            f"{dist.family.value} patience is not supported (no finite zero-expansion index)"
        )
    return dist.scaled(1.0), 1.0 / dist.mean
