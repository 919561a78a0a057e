"""Continuum of customer sensitivities: threshold allocations, optimum, equilibrium, prices.

Sensitivities ``beta`` are i.i.d. marks with distribution ``F`` on a Poisson
stream of total rate ``lam``.  Optimal and equilibrium routings assign whole
sensitivity intervals to queues, so an allocation is a queue order plus a
decreasing list of thresholds.  Internally thresholds are parametrised by the
fraction of traffic (upper-tail mass) sent to each queue.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel
from .model import InfeasibleError
from .pricing import PigouvianPrices, sorted_price_report
from .social_opt import project_rows_to_simplex
from .threshold import nested_threshold_equilibrium

MAX_ENUMERATED_QUEUES = 6
MASS_EPS = 1e-12


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float
    family = "uniform"

    def __post_init__(self):
        if not (0 <= self.low < self.high < math.inf):
            raise ValueError("uniform support must satisfy 0 <= low < high < inf")

    @property
    def support(self) -> tuple[float, float]:
        return self.low, self.high

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)

    def quantile(self, q):
        return self.low + np.asarray(q, dtype=float) * (self.high - self.low)

    def partial_moment(self, x, y):
        """``int_x^y beta dF(beta)`` for ``low <= x <= y <= high``."""
        x, y = np.clip(x, self.low, self.high), np.clip(y, self.low, self.high)
        return (y * y - x * x) / (2.0 * (self.high - self.low))

    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)

    def to_dict(self) -> dict:
        return {"family": self.family, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class TruncatedExponential:
    """Exponential sensitivities restricted to ``[0, upper]``."""

    rate: float
    upper: float
    family = "truncated_exponential"

    def __post_init__(self):
        if not (self.rate > 0 and 0 < self.upper < math.inf):
            raise ValueError("truncated exponential needs rate > 0 and finite upper > 0")

    @property
    def support(self) -> tuple[float, float]:
        return 0.0, self.upper

    @property
    def _z(self) -> float:
        return -math.expm1(-self.rate * self.upper)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.upper)
        return -np.expm1(-self.rate * x) / self._z

    def quantile(self, q):
        return -np.log1p(-np.asarray(q, dtype=float) * self._z) / self.rate

    def _h(self, x):
        return -(x + 1.0 / self.rate) * np.exp(-self.rate * x)

    def partial_moment(self, x, y):
        x, y = np.clip(x, 0.0, self.upper), np.clip(y, 0.0, self.upper)
        return (self._h(y) - self._h(x)) / self._z

    def mean(self) -> float:
        return float(self.partial_moment(0.0, self.upper))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.quantile(rng.uniform(size=n))

    def to_dict(self) -> dict:
        return {"family": self.family, "rate": self.rate, "upper": self.upper}


def distribution_from_dict(d: dict):
    if d["family"] == "uniform":
        return Uniform(float(d["low"]), float(d["high"]))
    if d["family"] == "truncated_exponential":
        return TruncatedExponential(float(d["rate"]), float(d["upper"]))
    raise ValueError(f"unknown sensitivity distribution {d['family']!r}")


@dataclass(frozen=True)
class ContinuumSpec:
    total_rate: float
    distribution: Uniform | TruncatedExponential
    queues: tuple[CostModel, ...]

    def __post_init__(self):
        object.__setattr__(self, "queues", tuple(self.queues))
        if not self.total_rate > 0:
            raise ValueError("total rate must be positive")
        if not self.queues:
            raise ValueError("need at least one queue")
        if self.total_rate >= sum(q.capacity for q in self.queues):
            raise InfeasibleError("infeasible: total load exceeds capacity")

    @property
    def N(self) -> int:
        return len(self.queues)

    def upper_tail_sensitivity(self, s):
        """Sensitivity at upper-tail mass fraction ``s`` (``s = 0`` is the top of the support)."""
        return self.distribution.quantile(1.0 - np.asarray(s, dtype=float))


@dataclass(frozen=True)
class ThresholdAllocation:
    used_queue_order: tuple[int, ...]
    thresholds: tuple[float, ...]
    flows: np.ndarray = field(compare=False)

    @property
    def intervals(self) -> list[tuple[int, float, float]]:
        """``(queue, lower, upper)`` sensitivity interval per used queue."""
        uppers = (math.inf,) + self.thresholds[:-1]
        return list(zip(self.used_queue_order, self.thresholds, uppers))


def make_allocation(cspec: ContinuumSpec, order, thresholds) -> ThresholdAllocation:
    order = tuple(int(j) for j in order)
    th = tuple(float(t) for t in thresholds)
    if len(order) != len(th) or not order:
        raise ValueError("need one threshold per used queue")
    if len(set(order)) != len(order) or not all(0 <= j < cspec.N for j in order):
        raise ValueError("used queue order must list distinct valid queue indices")
    if any(b >= a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be strictly decreasing")
    lo, hi = cspec.distribution.support
    # the last threshold closes the interval partition at the bottom of the support
    th = th[:-1] + (min(th[-1], lo),)
    alloc = ThresholdAllocation(order, th, np.zeros(cspec.N))
    return ThresholdAllocation(order, th, threshold_flows(cspec, alloc))


def threshold_flows(cspec: ContinuumSpec, alloc: ThresholdAllocation) -> np.ndarray:
    th = alloc.thresholds
    if any(b >= a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be strictly decreasing")
    F = cspec.distribution.cdf
    gamma = np.zeros(cspec.N)
    for j, lower, upper in alloc.intervals:
        gamma[j] = cspec.total_rate * (F(upper) - F(lower))
    return gamma


def continuum_cost(cspec: ContinuumSpec, alloc: ThresholdAllocation) -> float:
    gamma = threshold_flows(cspec, alloc)
    total = 0.0
    for j, lower, upper in alloc.intervals:
        if gamma[j] >= cspec.queues[j].capacity:
            return math.inf
        moment = cspec.distribution.partial_moment(lower, upper)
        total += cspec.queues[j].value(gamma[j]) * cspec.total_rate * float(moment)
    return total


def monte_carlo_cost(cspec: ContinuumSpec, alloc: ThresholdAllocation, n: int, seed: int = 0):
    """Sample estimate and standard error of the welfare integral for ``alloc``."""
    rng = np.random.default_rng(seed)
    beta = cspec.distribution.sample(rng, n)
    gamma = threshold_flows(cspec, alloc)
    per = np.zeros(n)
    for j, lower, upper in alloc.intervals:
        mask = (beta >= lower) & (beta < upper)
        per[mask] = beta[mask] * cspec.queues[j].value(gamma[j])
    per *= cspec.total_rate
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(n))


# -- welfare optimum ---------------------------------------------------------


def _mass_objective(cspec: ContinuumSpec, perm, x: np.ndarray):
    """Cost and gradient when queue ``perm[k]`` takes upper-tail mass fraction ``x[k]``."""
    lam = cspec.total_rate
    dist = cspec.distribution
    s = np.concatenate([[0.0], np.cumsum(x)])
    s[-1] = 1.0
    b = cspec.upper_tail_sensitivity(np.clip(s, 0.0, 1.0))
    G = np.array([dist.partial_moment(b[k + 1], b[k]) for k in range(len(x))])
    gam = lam * x
    queues = [cspec.queues[j] for j in perm]
    if any(g >= q.capacity for g, q in zip(gam, queues)):
        return math.inf, None
    D = np.array([q.value(g) for q, g in zip(queues, gam)])
    dD = np.array([q.derivative(g) for q, g in zip(queues, gam)])
    f = lam * float(D @ G)
    # moving the boundary s_k shifts mass between interval k and k+1
    Dnext = np.append(D[1:], 0.0)
    tail = np.cumsum(((D - Dnext) * b[1:])[::-1])[::-1]
    grad = lam * lam * dD * G + lam * tail
    return f, grad


def _optimize_mass(cspec, perm, x0, max_iters, tol):
    x = x0.copy()
    f, g = _mass_objective(cspec, perm, x)
    step = 1.0 / max(np.abs(g).max(), 1e-12)
    for _ in range(max_iters):
        used = x > MASS_EPS
        res = g[used].max() - g.min()
        if res <= tol:
            break
        d = project_rows_to_simplex(x - step * g)[0] - x
        slope = float(g @ d)
        if slope >= 0:
            step = 1.0 / max(np.abs(g).max(), 1e-12)
            d = project_rows_to_simplex(x - step * g)[0] - x
            slope = float(g @ d)
            if slope >= 0:
                break
        t = 1.0
        while True:
            f_new, g_new = _mass_objective(cspec, perm, x + t * d)
            if f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, res
        x_new = x + t * d
        sd, yd = x_new - x, g_new - g
        sy = float(sd @ yd)
        step = float(sd @ sd) / sy if sy > 0 else 1e4 * step
        step = min(max(step, 1e-12), 1e12)
        x, f, g = x_new, f_new, g_new
    used = x > MASS_EPS
    return x, f, float(g[used].max() - g.min())


def _allocation_from_mass(cspec, perm, x) -> ThresholdAllocation:
    s = np.cumsum(x)
    b = cspec.upper_tail_sensitivity(np.clip(s, 0.0, 1.0))
    keep = [k for k in range(len(x)) if x[k] > MASS_EPS]
    order = [perm[k] for k in keep]
    th = [float(b[k]) for k in keep]
    th[-1] = cspec.distribution.support[0]
    return make_allocation(cspec, order, th)


@dataclass
class ContinuumOptimum:
    allocation: ThresholdAllocation
    cost: float
    kkt_residual: float
    orderings_tried: int


def solve_continuum_optimum(
    cspec: ContinuumSpec,
    max_iters: int = 5000,
    kkt_tol: float = 1e-11,
) -> ContinuumOptimum:
    """Best threshold allocation over every queue ordering (``N <= 6``).

    Zero-mass queues drop out, so orderings of all ``N`` queues also cover
    every ordering of every subset.
    """
    if cspec.N > MAX_ENUMERATED_QUEUES:
        raise ValueError(f"ordering enumeration is limited to {MAX_ENUMERATED_QUEUES} queues")
    cap = np.array([q.capacity for q in cspec.queues])
    best = None
    tried = 0
    for perm in itertools.permutations(range(cspec.N)):
        tried += 1
        x0 = cap[list(perm)] / cap.sum()
        x, f, res = _optimize_mass(cspec, perm, x0, max_iters, kkt_tol)
        if best is None or f < best[0] - 1e-13 * abs(best[0]):
            best = (f, perm, x, res)
    f, perm, x, res = best
    alloc = _allocation_from_mass(cspec, perm, x)
    return ContinuumOptimum(alloc, continuum_cost(cspec, alloc), res, tried)


def ordering_violations(cspec: ContinuumSpec, alloc: ThresholdAllocation, tol: float = 1e-8):
    """Adjacent used queues whose delays are not strictly increasing down the sensitivity scale."""
    gamma = alloc.flows
    D = [cspec.queues[j].value(gamma[j]) for j in alloc.used_queue_order]
    return [
        (alloc.used_queue_order[k], alloc.used_queue_order[k + 1])
        for k in range(len(D) - 1)
        if not D[k] < D[k + 1] - tol
    ]


# -- equilibrium and prices --------------------------------------------------


def solve_continuum_equilibrium(cspec: ContinuumSpec, prices, xtol: float = 1e-15) -> ThresholdAllocation:
    """Thresholds at which every boundary customer is indifferent between neighbours."""
    c = np.asarray(prices, dtype=float)
    if c.shape != (cspec.N,):
        raise ValueError(f"expected {cspec.N} prices")
    if len(np.unique(c)) != len(c):
        raise ValueError("equal admission prices are not supported; merge those queues first")
    q_order = [int(j) for j in np.argsort(-c, kind="stable")]
    lam = cspec.total_rate

    def sens(s):
        return float(cspec.upper_tail_sensitivity(min(max(s / lam, 0.0), 1.0)))

    ends = nested_threshold_equilibrium(
        lam,
        sens,
        sens,
        [c[j] for j in q_order],
        [cspec.queues[j].value for j in q_order],
        continuous=True,
        xtol=xtol,
    )
    starts = [0.0] + ends[:-1]
    keep = [k for k in range(len(ends)) if ends[k] - starts[k] > MASS_EPS * lam]
    order = [q_order[k] for k in keep]
    th = [sens(ends[k]) for k in keep]
    th[-1] = cspec.distribution.support[0]
    return make_allocation(cspec, order, th)


def indifference_residual(cspec: ContinuumSpec, prices, alloc: ThresholdAllocation) -> float:
    """Largest cost gap between adjacent queues at their shared threshold."""
    c = np.asarray(prices, dtype=float)
    gamma = alloc.flows
    worst = 0.0
    for (j, t, _), (k, _, _) in zip(alloc.intervals, alloc.intervals[1:]):
        gap = c[j] + t * cspec.queues[j].value(gamma[j]) - c[k] - t * cspec.queues[k].value(gamma[k])
        worst = max(worst, abs(gap))
    return worst


def envelope_violation(cspec: ContinuumSpec, prices, alloc: ThresholdAllocation) -> float:
    """Largest saving any customer could get by switching queue (zero at equilibrium)."""
    c = np.asarray(prices, dtype=float)
    gamma = alloc.flows
    D = np.array([q.value(g) for q, g in zip(cspec.queues, gamma)])
    hi = cspec.distribution.support[1]
    worst = 0.0
    for j, lower, upper in alloc.intervals:
        for beta in (lower, min(upper, hi)):
            own = c[j] + beta * D[j]
            worst = max(worst, own - float(np.min(c + beta * D)))
    return worst


def continuum_pigouvian_prices(cspec: ContinuumSpec, alloc: ThresholdAllocation, strict: bool = True) -> PigouvianPrices:
    """``c_n = lam * D'_n(gamma_n) * int_{interval n} beta dF``; zero on unused queues."""
    gamma = alloc.flows
    c = np.zeros(cspec.N)
    used = np.zeros(cspec.N, dtype=bool)
    for j, lower, upper in alloc.intervals:
        q = cspec.queues[j]
        if gamma[j] >= q.capacity:
            raise InfeasibleError("flows on or beyond a queue's capacity; derivative undefined")
        c[j] = cspec.total_rate * q.derivative(gamma[j]) * float(cspec.distribution.partial_moment(lower, upper))
        used[j] = True
    D = np.array([q.value(g) for q, g in zip(cspec.queues, gamma)])
    return sorted_price_report(c, D, used, strict)
