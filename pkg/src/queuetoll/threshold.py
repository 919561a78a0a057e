"""Nested-bisection equilibrium search over contiguous sensitivity blocks.

Customers are laid out along a mass axis ``s in [0, total]`` in order of
decreasing delay sensitivity, and queues are sorted by decreasing price.
In any equilibrium queue ``k`` receives a contiguous mass interval, with
pricier queues taking the more sensitive customers.  The boundary of the
top queue is found by bisection; for every trial boundary the remaining
queues are solved recursively on the remaining mass.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq


def nested_threshold_equilibrium(
    total: float,
    sens_above: Callable[[float], float],
    sens_below: Callable[[float], float],
    prices: Sequence[float],
    costs: Sequence[Callable[[float], float]],
    continuous: bool = False,
    xtol: float = 1e-14,
) -> list[float]:
    """Return block end points ``e_0 <= ... <= e_{n-1} = total`` in price order.

    ``sens_above(s)`` is the sensitivity of the customer just above mass
    position ``s`` and ``sens_below(s)`` the one just below; they differ only
    at atoms.  ``costs[k](load)`` is queue ``k``'s congestion cost.
    """
    n = len(prices)
    if n == 0:
        raise ValueError("need at least one queue")
    scale = max(total, 1.0)

    def solve_from(k: int, top: float) -> list[float]:
        if k == n - 1:
            return [total]

        def sub_and_phi(s: float):
            sub = solve_from(k + 1, s)
            beta = sens_below(s) if s <= top else sens_above(s)
            loads = np.diff([s] + sub)
            own = prices[k] + _scaled(beta, costs[k](s - top))
            alt = min(prices[j] + _scaled(beta, costs[j](loads[j - k - 1])) for j in range(k + 1, n))
            if np.isinf(own):
                # an overloaded own queue must shrink whatever the rest looks like
                return np.inf, sub
            return own - alt, sub

        phi_top, sub_top = sub_and_phi(top)
        if phi_top > 0:
            return [top] + sub_top
        phi_end, sub_end = sub_and_phi(total)
        if phi_end <= 0:
            return [total] + sub_end
        if continuous:
            s_star = brentq(lambda s: _finite(sub_and_phi(s)[0]), top, total, xtol=xtol * scale, rtol=1e-15)
        else:
            lo, hi = top, total
            while hi - lo > xtol * scale:
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if sub_and_phi(mid)[0] <= 0:
                    lo = mid
                else:
                    hi = mid
            s_star = lo
        return [s_star] + solve_from(k + 1, s_star)

    return solve_from(0, 0.0)


def _scaled(beta: float, cost: float) -> float:
    # an overloaded queue is unusable even for customers with zero sensitivity
    return np.inf if np.isinf(cost) else beta * cost


def _finite(x: float) -> float:
    # brentq needs finite values; an overloaded queue is simply very unattractive
    return x if np.isfinite(x) else np.copysign(1e300, x)
