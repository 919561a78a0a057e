"""Pigouvian admission prices and their certification.

The price of queue ``n`` is the congestion externality a marginal customer
imposes there: ``c_n = D'_n(gamma_n) * sum_m beta_m S_m lam_m p_mn``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import InfeasibleError, SystemSpec, check_routing
from .social_opt import delay_order
from .wardrop import DEFAULT_SUPPORT_TOL, wardrop_residual

UNUSED_EPS = 1e-12


class NonOptimalRoutingError(ValueError):
    """Prices of used queues are not strictly decreasing in delay order."""


@dataclass
class PigouvianPrices:
    by_queue: np.ndarray
    order: list[int]
    unused: list[int]

    @property
    def sorted(self) -> np.ndarray:
        """Prices listed in ascending-delay queue order, unused queues last."""
        return self.by_queue[self.order]


@dataclass
class Certificate:
    certified: bool
    residual: float


def sorted_price_report(by_queue: np.ndarray, delays: np.ndarray, used: np.ndarray, strict: bool):
    used_idx = [j for j in delay_order(delays, 0.0) if used[j]]
    unused = [j for j in range(len(by_queue)) if not used[j]]
    c_used = by_queue[used_idx]
    if strict and np.any(np.diff(c_used) >= 0):
        raise NonOptimalRoutingError(
            f"prices {c_used} are not strictly decreasing in delay order; routing is not optimal"
        )
    return PigouvianPrices(by_queue=by_queue, order=used_idx + unused, unused=unused)


def pigouvian_prices(spec: SystemSpec, P_star, strict: bool = True) -> PigouvianPrices:
    P = check_routing(spec, P_star)
    gamma = spec.loads @ P
    if np.any(gamma >= spec.capacities):
        raise InfeasibleError("flows on or beyond a queue's capacity; derivative undefined")
    c = (spec.weights @ P) * spec.delay_derivatives(gamma)
    used = P.max(axis=0) > UNUSED_EPS
    c = np.where(used, c, 0.0)
    return sorted_price_report(c, spec.delays(gamma), used, strict)


def certify_prices(
    spec: SystemSpec,
    P_star,
    prices,
    tol: float,
    support_tol: float = DEFAULT_SUPPORT_TOL,
) -> Certificate:
    """Check that ``P_star`` is a Wardrop equilibrium at ``prices`` (original queue indexing)."""
    try:
        res = wardrop_residual(spec, prices, P_star, support_tol)
    except InfeasibleError:
        return Certificate(False, float("inf"))
    return Certificate(bool(res <= tol), res)


def price_shift(prices, delta: float) -> np.ndarray:
    """Add ``delta`` to every price; only price differences matter at equilibrium."""
    out = np.asarray(prices, dtype=float) + delta
    if np.any(out < -1e-12):
        raise ValueError("shift would make a price negative")
    return np.maximum(out, 0.0)
