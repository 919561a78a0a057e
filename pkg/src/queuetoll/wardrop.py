"""Wardrop equilibria of the admission-price routing game.

A class-``i`` customer choosing queue ``j`` pays ``c_j + beta_i S_i D_j(gamma_j)``.
At equilibrium every queue a class uses is one of its cheapest.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .model import InfeasibleError, SystemSpec, check_routing
from .threshold import nested_threshold_equilibrium

DEFAULT_SUPPORT_TOL = 1e-7


@dataclass
class EquilibriumResult:
    P_w: np.ndarray
    gamma_w: np.ndarray
    residual: float
    per_class_cost: np.ndarray
    iterations: int
    converged: bool


def check_prices(spec: SystemSpec, prices, distinct: bool = False) -> np.ndarray:
    c = np.asarray(prices, dtype=float)
    if c.shape != (spec.N,):
        raise ValueError(f"expected {spec.N} prices, got shape {c.shape}")
    if np.any(~np.isfinite(c)) or np.any(c < 0):
        raise ValueError("prices must be finite and nonnegative")
    if distinct and len(np.unique(c)) != len(c):
        raise ValueError("equal admission prices are not supported; merge those queues first")
    return c


def choice_costs(spec: SystemSpec, prices, P) -> np.ndarray:
    """``(M, N)`` matrix of per-customer costs ``c_j + beta_i S_i D_j(gamma_j)``."""
    P = check_routing(spec, P)
    c = check_prices(spec, prices)
    gamma = spec.loads @ P
    return c[None, :] + np.outer(spec.customer_sensitivities, spec.delays(gamma))


def _residual(costs: np.ndarray, P: np.ndarray, support_tol: float) -> float:
    with np.errstate(invalid="ignore"):
        gaps = np.where(P > support_tol, costs - costs.min(axis=1, keepdims=True), 0.0)
    return float(np.max(gaps)) if np.all(np.isfinite(gaps)) else math.inf


def wardrop_residual(spec: SystemSpec, prices, P, support_tol: float = DEFAULT_SUPPORT_TOL) -> float:
    P = check_routing(spec, P)
    if np.any(spec.loads @ P >= spec.capacities):
        raise InfeasibleError("flows outside the cost-model domain")
    return _residual(choice_costs(spec, prices, P), P, support_tol)


def _best_response(costs: np.ndarray) -> np.ndarray:
    m = costs.min(axis=1, keepdims=True)
    br = (costs <= m).astype(float)
    return br / br.sum(axis=1, keepdims=True)


def _safe_delays(spec: SystemSpec, gamma: np.ndarray) -> np.ndarray:
    """Delays with a linear continuation past 1 - 1e-9 of capacity (keeps Newton finite)."""
    out = np.empty_like(gamma)
    for j, (q, g) in enumerate(zip(spec.queues, gamma)):
        edge = q.capacity * (1 - 1e-9)
        g0 = min(max(g, 0.0), edge)
        out[j] = q.value(g0) + q.derivative(g0) * (g - g0)
    return out


def _polish(spec: SystemSpec, c: np.ndarray, P: np.ndarray, support_tol: float):
    """Semismooth Newton on the Wardrop complementarity system.

    Unknowns are the routing matrix and per-class equilibrium costs ``m_i``;
    the Fischer-Burmeister function ``a + b - sqrt(a^2 + b^2)`` with
    ``a = p_ij`` and ``b = cost_ij - m_i`` vanishes iff ``a, b >= 0, ab = 0``.
    """
    M, N = P.shape
    beta = spec.customer_sensitivities

    def F(x):
        Q = x[: M * N].reshape(M, N)
        m = x[M * N :]
        D = _safe_delays(spec, spec.loads @ Q)
        b = c[None, :] + np.outer(beta, D) - m[:, None]
        fb = Q + b - np.hypot(Q, b)
        return np.concatenate([fb.ravel(), Q.sum(axis=1) - 1.0])

    m0 = _costs(spec, c, P).min(axis=1)
    x0 = np.concatenate([P.ravel(), np.where(np.isfinite(m0), m0, 0.0)])
    with np.errstate(all="ignore"):
        sol = least_squares(F, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * (M * N + M))
    Q = np.clip(sol.x[: M * N].reshape(M, N), 0.0, None)
    Q[Q < support_tol * 0.1] = 0.0
    rows = Q.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(Q)) or np.any(rows <= 0):
        return None
    Q /= rows
    if np.any(spec.loads @ Q >= spec.capacities):
        return None
    return Q


def _costs(spec: SystemSpec, c: np.ndarray, P: np.ndarray) -> np.ndarray:
    gamma = spec.loads @ P
    return c[None, :] + np.outer(spec.customer_sensitivities, spec.delays(gamma))


def _weighted_gap(spec: SystemSpec, costs: np.ndarray, P: np.ndarray) -> float:
    with np.errstate(invalid="ignore"):
        g = float(spec.rates @ np.sum(P * (costs - costs.min(axis=1, keepdims=True)), axis=1))
    return g if np.isfinite(g) else math.inf


def solve_equilibrium(
    spec: SystemSpec,
    prices,
    max_iters: int = 10000,
    tol: float = 1e-6,
    damping: float = 0.5,
    tau: float = 50.0,
    support_tol: float = DEFAULT_SUPPORT_TOL,
    seed: int | None = None,
    polish_every: int = 50,
) -> EquilibriumResult:
    """Damped simultaneous best response, finished by an active-set Newton polish.

    Each round every class moves a fraction ``eta_t = damping / (1 + t/tau)``
    of its traffic to its current cheapest queues.  A step is kept only if it
    does not raise the flow-weighted cost gap; otherwise ``eta`` is halved.
    The iterate with the smallest equilibrium residual is returned.
    """
    c = check_prices(spec, prices, distinct=True)
    cap = spec.capacities
    P = np.tile(cap / cap.sum(), (spec.M, 1))
    if seed is not None:
        rng = np.random.default_rng(seed)
        R = rng.dirichlet(np.ones(spec.N), size=spec.M)
        alpha = 1.0
        while np.any(spec.loads @ (alpha * R + (1 - alpha) * P) >= cap):
            alpha *= 0.5
        P = alpha * R + (1 - alpha) * P

    costs = _costs(spec, c, P)
    gap = _weighted_gap(spec, costs, P)
    res = _residual(costs, P, support_tol)
    best = (res, P, costs)
    avg, weight = np.zeros_like(P), 0.0
    t = 0
    for t in range(1, max_iters + 1):
        if best[0] <= tol:
            break
        if t % polish_every == 0:
            for start in (P, avg / weight):
                Q = _polish(spec, c, start, support_tol)
                if Q is None:
                    continue
                q_costs = _costs(spec, c, Q)
                q_res = _residual(q_costs, Q, support_tol)
                if q_res < best[0]:
                    best = (q_res, Q, q_costs)
                    P, costs, gap = Q, q_costs, _weighted_gap(spec, q_costs, Q)
            if best[0] <= tol:
                break
        br = _best_response(costs)
        eta = damping / (1.0 + t / tau)
        eta_min = eta / 64
        while True:
            P_new = (1.0 - eta) * P + eta * br
            feasible = np.all(spec.loads @ P_new < cap)
            if feasible:
                costs_new = _costs(spec, c, P_new)
                gap_new = _weighted_gap(spec, costs_new, P_new)
                # below eta_min the step is taken regardless, so the dynamics never stall
                if gap_new <= gap or eta <= eta_min:
                    break
            elif eta <= eta_min * 1e-6:
                break
            eta *= 0.5
        if not feasible:
            continue
        P, costs, gap = P_new, costs_new, gap_new
        avg += eta * P
        weight += eta
        res = _residual(costs, P, support_tol)
        if res < best[0]:
            best = (res, P, costs)

    res, P, costs = best
    # drop sub-tolerance mass left on strictly costlier queues
    stray = (P > 0) & (P <= support_tol) & (costs > costs.min(axis=1, keepdims=True))
    if stray.any():
        Q = np.where(stray, 0.0, P)
        Q /= Q.sum(axis=1, keepdims=True)
        if np.all(spec.loads @ Q < cap):
            q_costs = _costs(spec, c, Q)
            q_res = _residual(q_costs, Q, support_tol)
            if q_res <= res:
                res, P, costs = q_res, Q, q_costs
    per_class = np.array([costs[i, P[i] > support_tol].min() for i in range(spec.M)])
    return EquilibriumResult(
        P_w=P,
        gamma_w=spec.loads @ P,
        residual=res,
        per_class_cost=per_class,
        iterations=t,
        converged=res <= tol,
    )


def threshold_oracle(spec: SystemSpec, prices, xtol: float = 1e-14) -> np.ndarray:
    """Independent equilibrium search using the contiguous-block structure.

    Classes are laid out by decreasing customer sensitivity on a load axis and
    queues by decreasing price; block boundaries are found by nested bisection.
    Intended for small instances (the cost grows geometrically with ``N``).
    """
    c = check_prices(spec, prices, distinct=True)
    beta = spec.customer_sensitivities
    a = spec.loads
    cls_order = np.argsort(-beta, kind="stable")
    edges = np.concatenate([[0.0], np.cumsum(a[cls_order])])
    total = float(edges[-1])
    q_order = np.argsort(-c, kind="stable")

    def sens_above(s):
        k = np.searchsorted(edges, s, side="left") - 1
        return float(beta[cls_order[min(max(k, 0), len(cls_order) - 1)]])

    def sens_below(s):
        k = np.searchsorted(edges, s, side="right") - 1
        return float(beta[cls_order[min(max(k, 0), len(cls_order) - 1)]])

    ends = nested_threshold_equilibrium(
        total,
        sens_above,
        sens_below,
        [c[j] for j in q_order],
        [spec.queues[j].value for j in q_order],
        continuous=False,
        xtol=xtol,
    )
    P = np.zeros((spec.M, spec.N))
    starts = [0.0] + ends[:-1]
    for pos, (s0, s1) in enumerate(zip(starts, ends)):
        j = q_order[pos]
        for r, i in enumerate(cls_order):
            overlap = min(s1, edges[r + 1]) - max(s0, edges[r])
            if overlap > 0:
                P[i, j] += overlap / a[i]
    return P / P.sum(axis=1, keepdims=True)


def block_structure_violations(P, prices, support_tol: float = DEFAULT_SUPPORT_TOL) -> list[tuple]:
    """Pairs ``(i1 < i2, j1, j2)`` with ``c_j1 > c_j2`` where ``i1`` uses ``j2`` and ``i2`` uses ``j1``."""
    P = np.asarray(P, dtype=float)
    c = np.asarray(prices, dtype=float)
    out = []
    for i1, i2 in itertools.combinations(range(P.shape[0]), 2):
        for j1, j2 in itertools.permutations(range(P.shape[1]), 2):
            if c[j1] > c[j2] and P[i1, j2] > support_tol and P[i2, j1] > support_tol:
                out.append((i1, i2, j1, j2))
    return out
