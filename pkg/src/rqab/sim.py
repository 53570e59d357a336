"""Discrete-event simulation of GI/GI/1+GI queues and two-station tandems.

Customers are processed one arrival at a time with the offered-wait
recursion ``W' = max(0, W + V 1{D > W} - U)``.  Between arrivals the virtual
wait falls at unit rate, so its time integral is accumulated exactly.
Random inputs come from Philox generators with one substream per input
(arrivals, services, patience) so that coupled runs share randomness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from .dist import Distribution
from .exceptions import ParameterError
from .rqcore import QueueModel

__all__ = [
    "SimConfig",
    "SimEstimate",
    "EffectiveIdwEstimate",
    "simulate_queue",
    "simulate_tandem",
    "estimate_effective_idw",
    "departure_idc_monte_carlo",
    "make_streams",
]

CHUNK = 1 << 18
MIN_WINDOWS = 30

# state slots shared by the kernels
T_LAST, Z_POST, Z_TOT, DONE, VIOL = range(5)


@dataclass(frozen=True)
class SimConfig:
    """Run-length and seeding for one simulation.

    ``warmup_time`` defaults to the larger of 10% of ``run_time`` and the
    time of 10^4 arrivals.
    """

    model: QueueModel
    run_time: float
    warmup_time: float | None = None
    n_batches: int = 20
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if not self.run_time > 0:
            raise ParameterError("run_time must be positive")
        if self.warmup_time is not None and self.warmup_time < 0:
            raise ParameterError("warmup_time must be nonnegative")
        if self.n_batches < 10:
            raise ParameterError("n_batches must be at least 10")
        if self.replications < 1:
            raise ParameterError("replications must be at least 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.model.interarrival is None or self.model.service is None:
            raise ParameterError("simulation needs interarrival and service laws on the model")
        if self.run_time < 10 * self.warmup:
            warnings.warn(f"run_time {self.run_time:g} is under ten warm-up periods ({self.warmup:g})", stacklevel=2)

    @property
    def warmup(self) -> float:
        if self.warmup_time is not None:
            return float(self.warmup_time)
        return max(0.1 * self.run_time, 1e4 / self.model.lam)


@dataclass(frozen=True)
class SimEstimate:
    mean_virtual_wait: float
    ci_halfwidth: float
    p_abandon: float
    p_abandon_ci: float
    mean_wait_served: float
    wait_served_ci: float
    n_arrivals: int
    batches: dict = field(default_factory=dict, repr=False)
    domination_violations: int = 0

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean_virtual_wait - self.ci_halfwidth, self.mean_virtual_wait + self.ci_halfwidth

    def covers(self, value: float) -> bool:
        lo, hi = self.ci
        return lo <= value <= hi

    def to_dict(self) -> dict:
        return {
            "mean_virtual_wait": self.mean_virtual_wait,
            "ci_halfwidth": self.ci_halfwidth,
            "p_abandon": self.p_abandon,
            "p_abandon_ci": self.p_abandon_ci,
            "mean_wait_served": self.mean_wait_served,
            "wait_served_ci": self.wait_served_ci,
            "n_arrivals": self.n_arrivals,
            "domination_violations": self.domination_violations,
        }


# -- kernels -----------------------------------------------------------------------------


@njit(cache=True)
def _area(z, s):
    """``int_0^s max(z - x, 0) dx``."""
    if s <= z:
        return s * (z - 0.5 * s)
    return 0.5 * z * z


@njit(cache=True)
def _queue_chunk(inter, svc, pat, state, t0, t_end, blen, area, n_arr, n_ab, wsum, n_srv, rec_t, rec_y):
    """Advance the queue over one chunk of inputs; returns the number of recorded arrivals."""
    nb = area.shape[0]
    t_last = state[T_LAST]
    z = state[Z_POST]
    zt = state[Z_TOT]
    viol = state[VIOL]
    nrec = 0
    record = rec_t.shape[0] > 0
    for i in range(inter.shape[0]):
        u = inter[i]
        t = t_last + u
        # exact time integral of the decaying virtual wait over [t_last, t] within the window
        lo = max(t_last, t0)
        hi = min(t, t_end)
        if lo < hi:
            b = int((lo - t0) / blen)
            if b > nb - 1:
                b = nb - 1
            while lo < hi:
                edge = t0 + (b + 1) * blen
                if b == nb - 1 or edge > hi:
                    edge = hi
                area[b] += _area(z, edge - t_last) - _area(z, lo - t_last)
                lo = edge
                b += 1
        if t > t_end:
            state[DONE] = 1.0
            break
        w = z - u
        if w < 0.0:
            w = 0.0
        wt = zt - u
        if wt < 0.0:
            wt = 0.0
        if w > wt:
            viol += 1.0
        served = pat[i] > w
        v = svc[i] if served else 0.0
        if t >= t0:
            b = int((t - t0) / blen)
            if b > nb - 1:
                b = nb - 1
            n_arr[b] += 1
            if served:
                wsum[b] += w
                n_srv[b] += 1
            else:
                n_ab[b] += 1
            if record:
                rec_t[nrec] = t
                rec_y[nrec] = v
                nrec += 1
        z = w + v
        zt = wt + svc[i]
        t_last = t
    state[T_LAST] = t_last
    state[Z_POST] = z
    state[Z_TOT] = zt
    state[VIOL] = viol
    return nrec


@njit(cache=True)
def _lindley_departures(inter, svc, carry):
    """Departure epochs of a FIFO single-server queue; ``carry = [last arrival, last departure]``."""
    n = inter.shape[0]
    dep = np.empty(n)
    a = carry[0]
    d = carry[1]
    for i in range(n):
        a += inter[i]
        start = a if a > d else d
        d = start + svc[i]
        dep[i] = d
    carry[0] = a
    carry[1] = d
    return dep


# -- streams and drivers -------------------------------------------------------------------


def make_streams(seed: int, n: int = 3, replication: int = 0) -> list[np.random.Generator]:
    """Independent Philox generators for the inputs of one replication."""
    root = np.random.SeedSequence(int(seed)).spawn(replication + 1)[replication]
    return [np.random.Generator(np.random.Philox(s)) for s in root.spawn(n)]


@dataclass
class _Acc:
    area: np.ndarray
    n_arr: np.ndarray
    n_ab: np.ndarray
    wsum: np.ndarray
    n_srv: np.ndarray

    @classmethod
    def empty(cls, nb):
        return cls(np.zeros(nb), np.zeros(nb, np.int64), np.zeros(nb, np.int64), np.zeros(nb), np.zeros(nb, np.int64))


def _run_queue(interarrival_chunks, svc: Distribution, model: QueueModel, cfg: SimConfig, rng_s, rng_p,
               record: bool = False):
    t0 = cfg.warmup
    t_end = t0 + cfg.run_time
    blen = cfg.run_time / cfg.n_batches
    acc = _Acc.empty(cfg.n_batches)
    state = np.zeros(5)
    rec_t_all, rec_y_all = [], []
    for inter in interarrival_chunks:
        n = inter.shape[0]
        s = svc.sample(rng_s, n)
        d = model.patience.sample(rng_p, n) / model.alpha
        rt = np.empty(n if record else 0)
        ry = np.empty(n if record else 0)
        k = _queue_chunk(inter, s, d, state, t0, t_end, blen, acc.area, acc.n_arr, acc.n_ab, acc.wsum,
                         acc.n_srv, rt, ry)
        if record:
            rec_t_all.append(rt[:k])
            rec_y_all.append(ry[:k])
        if state[DONE]:
            break
    rec = (np.concatenate(rec_t_all), np.concatenate(rec_y_all)) if record else None
    return acc, int(state[VIOL]), rec


def _renewal_chunks(dist: Distribution, rng):
    while True:
        yield dist.sample(rng, CHUNK)


def _tandem_chunks(queue1: QueueModel, rng_a, rng_s):
    carry = np.zeros(2)
    prev = 0.0
    while True:
        dep = _lindley_departures(queue1.interarrival.sample(rng_a, CHUNK), queue1.service.sample(rng_s, CHUNK), carry)
        gaps = np.diff(dep, prepend=prev)
        prev = dep[-1]
        yield gaps


def _merge_empty(acc: _Acc) -> _Acc:
    """Fold batches without arrivals into their successor (or predecessor at the end)."""
    keep = acc.n_arr > 0
    if keep.all():
        return acc
    warnings.warn(f"{int((~keep).sum())} batch(es) without arrivals merged with a neighbour", stacklevel=3)
    groups = np.cumsum(np.r_[0, keep[:-1]])
    if not keep[-1]:
        groups[groups == groups[-1]] = max(groups[-1] - 1, 0)
    n = groups.max() + 1
    return _Acc(*(np.bincount(groups, weights=a, minlength=n).astype(a.dtype) for a in
                  (acc.area, acc.n_arr, acc.n_ab, acc.wsum, acc.n_srv)))


def _halfwidth(x: np.ndarray, level: float = 0.95) -> float:
    n = x.size
    if n < 2:
        return math.inf
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * x.std(ddof=1) / math.sqrt(n))


def _summarize(accs: list[_Acc], blen: float, viol: int) -> SimEstimate:
    area = np.concatenate([a.area for a in accs])
    z_batches = area / blen
    merged = [_merge_empty(a) for a in accs]
    n_arr = np.concatenate([a.n_arr for a in merged])
    n_ab = np.concatenate([a.n_ab for a in merged])
    n_srv = np.concatenate([a.n_srv for a in merged])
    wsum = np.concatenate([a.wsum for a in merged])
    p_b = n_ab / n_arr
    w_b = np.divide(wsum, n_srv, out=np.zeros_like(wsum), where=n_srv > 0)
    tot_arr = int(n_arr.sum())
    tot_srv = int(n_srv.sum())
    return SimEstimate(
        mean_virtual_wait=float(z_batches.mean()),
        ci_halfwidth=_halfwidth(z_batches),
        p_abandon=float(n_ab.sum() / tot_arr) if tot_arr else 0.0,
        p_abandon_ci=_halfwidth(p_b),
        mean_wait_served=float(wsum.sum() / tot_srv) if tot_srv else 0.0,
        wait_served_ci=_halfwidth(w_b[n_srv > 0]),
        n_arrivals=tot_arr,
        batches={"mean_virtual_wait": z_batches, "p_abandon": p_b, "mean_wait_served": w_b,
                 "n_arrivals": n_arr},
        domination_violations=viol,
    )


def _one_replication(cfg: SimConfig, r: int):
    m = cfg.model
    rng_a, rng_s, rng_p = make_streams(cfg.seed, 3, r)
    acc, viol, _ = _run_queue(_renewal_chunks(m.interarrival, rng_a), m.service, m, cfg, rng_s, rng_p)
    return acc, viol


def simulate_queue(config: SimConfig, n_jobs: int = 1) -> SimEstimate:
    """Batch-means estimates for the model in ``config``; replications pool their batches."""
    reps = range(config.replications)
    if n_jobs == 1 or config.replications == 1:
        out = [_one_replication(config, r) for r in reps]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=n_jobs)(delayed(_one_replication)(config, r) for r in reps)
    return _summarize([a for a, _ in out], config.run_time / config.n_batches, sum(v for _, v in out))


def simulate_tandem(queue1: QueueModel, queue2: QueueModel, config: SimConfig) -> SimEstimate:
    """Station 2 of a tandem: its arrivals are the departures of a FIFO GI/GI/1 station 1.

    Station 1's patience is ignored; ``config.model`` only supplies run lengths
    and is expected to be ``queue2``.
    """
    if queue1.rho >= 1:
        raise ParameterError(f"upstream load must be below one, got {queue1.rho}")
    if abs(queue1.lam - queue2.lam) > 1e-9 * queue1.lam:
        raise ParameterError("both stations must carry the same arrival rate")
    accs, viol = [], 0
    for r in range(config.replications):
        rng_a1, rng_s1, rng_s2, rng_p2 = make_streams(config.seed, 4, r)
        acc, v, _ = _run_queue(_tandem_chunks(queue1, rng_a1, rng_s1), queue2.service, queue2, config,
                               rng_s2, rng_p2)
        accs.append(acc)
        viol += v
    return _summarize(accs, config.run_time / config.n_batches, viol)


# -- effective input variability ----------------------------------------------------------


@dataclass(frozen=True)
class EffectiveIdwEstimate:
    t: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_windows: np.ndarray

    @property
    def reliable(self) -> np.ndarray:
        return self.n_windows >= MIN_WINDOWS


def _window_ratio(times, cum, t0, t_end, t, stride, scale, groups=10):
    starts = np.arange(t0, t_end - t + 1e-12 * t, stride)
    if starts.size < 2:
        return math.nan, math.nan, starts.size
    a = np.searchsorted(times, starts, side="left")
    b = np.searchsorted(times, starts + t, side="left")
    inc = cum[b] - cum[a]
    val = scale * inc.var(ddof=1) / inc.mean() if inc.mean() > 0 else math.nan
    parts = np.array_split(inc, groups) if inc.size >= 2 * groups else []
    ratios = [scale * p.var(ddof=1) / p.mean() for p in parts if p.size > 1 and p.mean() > 0]
    se = float(np.std(ratios, ddof=1) / math.sqrt(len(ratios))) if len(ratios) > 1 else math.nan
    return val, se, starts.size


def estimate_effective_idw(config: SimConfig, t_grid, overlapping: bool = False,
                           queue1: QueueModel | None = None) -> EffectiveIdwEstimate:
    """``mu Var(Y(t)) / E[Y(t)]`` for the work ``Y`` brought by eventually served customers.

    Windows are non-overlapping by default; ``overlapping`` uses a stride of
    a quarter window.  Standard errors come from ten contiguous groups of
    windows.  With ``queue1`` the arrivals are that station's departures.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(t_grid <= 0):
        raise ParameterError("t_grid must be a nonempty vector of positive times")
    m = config.model
    if queue1 is None:
        rng_a, rng_s, rng_p = make_streams(config.seed, 3, 0)
        chunks = _renewal_chunks(m.interarrival, rng_a)
    else:
        rng_a, rng_s1, rng_s, rng_p = make_streams(config.seed, 4, 0)
        chunks = _tandem_chunks(queue1, rng_a, rng_s1)
    _, _, (times, ys) = _run_queue(chunks, m.service, m, config, rng_s, rng_p, record=True)
    cum = np.concatenate([[0.0], np.cumsum(ys)])
    t0, t_end = config.warmup, config.warmup + config.run_time
    vals, ses, nw = [], [], []
    for t in t_grid:
        v, se, n = _window_ratio(times, cum, t0, t_end, t, t / 4 if overlapping else t, m.mu)
        vals.append(v)
        ses.append(se)
        nw.append(n)
    nw = np.array(nw)
    if np.any(nw < MIN_WINDOWS):
        warnings.warn(f"{int((nw < MIN_WINDOWS).sum())} horizon(s) have fewer than {MIN_WINDOWS} windows",
                      stacklevel=2)
    return EffectiveIdwEstimate(t_grid, np.array(vals), np.array(ses), nw)


def departure_idc_monte_carlo(queue1: QueueModel, t_grid, run_time: float, seed: int = 0,
                              warmup: float | None = None) -> EffectiveIdwEstimate:
    """Counting-process IDC of station-1 departures from one long run (non-overlapping windows)."""
    t_grid = np.asarray(t_grid, dtype=float)
    rng_a, rng_s = make_streams(seed, 2, 0)
    warmup = max(0.1 * run_time, 1e4 / queue1.lam) if warmup is None else warmup
    t_end = warmup + run_time
    carry = np.zeros(2)
    deps = []
    while carry[1] <= t_end:
        deps.append(_lindley_departures(queue1.interarrival.sample(rng_a, CHUNK),
                                        queue1.service.sample(rng_s, CHUNK), carry))
    times = np.concatenate(deps)
    cum = np.arange(times.size + 1, dtype=float)
    vals, ses, nw = [], [], []
    for t in t_grid:
        v, se, n = _window_ratio(times, cum, warmup, t_end, t, t, 1.0)
        vals.append(v)
        ses.append(se)
        nw.append(n)
    return EffectiveIdwEstimate(t_grid, np.array(vals), np.array(ses), np.array(nw))
