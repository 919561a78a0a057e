"""Welfare-optimal routing and structural certificates for candidate optima.

The objective is not convex, so :func:`solve_social_optimum` runs projected
gradient descent from several starting points and keeps the best.  Any
local optimum must satisfy the ordering properties checked by
:func:`check_optimal_structure`, which makes that check a cheap bug detector.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .model import InfeasibleError, SystemSpec, _gradient, check_routing

SUPPORT_EPS = 1e-9
GRID_EVAL_LIMIT = 10**8
PG_ITERS = 200


@dataclass
class OptimumResult:
    P_star: np.ndarray
    gamma_star: np.ndarray
    U_star: float
    kkt_residual: float
    restarts_used: int
    converged: bool
    iterations: int = 0


@dataclass
class StructureReport:
    queue_order: list[int]
    block_bounds: list[int]
    violations: list[tuple] = field(default_factory=list)

    @property
    def is_consistent(self) -> bool:
        return not self.violations


def project_rows_to_simplex(X: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row of ``X`` onto the probability simplex."""
    X = np.atleast_2d(X)
    n = X.shape[1]
    U = -np.sort(-X, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(X.shape[0]), rho] / (rho + 1)
    return np.maximum(X - theta[:, None], 0.0)


def kkt_residual(P: np.ndarray, grad: np.ndarray) -> float:
    """Largest gap between a used coordinate's gradient and its row minimum."""
    gmin = grad.min(axis=1)
    used = np.where(P > SUPPORT_EPS, grad, -np.inf)
    return float(np.max(used.max(axis=1) - gmin))


def _objective(spec: SystemSpec, P: np.ndarray) -> tuple[float, np.ndarray]:
    gamma = spec.loads @ P
    if np.any(gamma >= spec.capacities):
        return math.inf, gamma
    return float((spec.weights @ P) @ spec.delays(gamma)), gamma


def _descend(spec: SystemSpec, P: np.ndarray, max_iters: int, kkt_tol: float):
    """Projected gradient to locate the basin, then SQP and a Newton polish to finish.

    The first phase is spectral projected gradient with Armijo backtracking;
    gradient rows carry a factor ``lam_i S_i`` and are divided by it so
    classes with tiny rates still move.  Close to capacity the curvature is
    extreme and first-order steps crawl, so the iterate is refined by SLSQP
    (accepted only if it does not raise ``U``) and finally by
    :func:`_polish`.
    """
    scale = 1.0 / spec.loads[:, None]
    f, gamma = _objective(spec, P)
    g = _gradient(spec, P, gamma)
    G = g * scale
    step = 1.0 / max(np.abs(G).max(), 1e-12)
    res = kkt_residual(P, g)
    it = 0
    for it in range(1, min(max_iters, PG_ITERS) + 1):
        if res <= kkt_tol:
            break
        d = project_rows_to_simplex(P - step * G) - P
        slope = float(np.sum(g * d))
        if slope >= 0 or not np.any(d):
            # projected step vanished; restart the step length from scratch
            step = 1.0 / max(np.abs(G).max(), 1e-12)
            d = project_rows_to_simplex(P - step * G) - P
            slope = float(np.sum(g * d))
            if slope >= 0:
                break
        t = 1.0
        while True:
            P_new = P + t * d
            f_new, gamma_new = _objective(spec, P_new)
            # a few ulps of slack so round-off near the optimum cannot stall the search
            if f_new <= f + 1e-4 * t * slope + 8 * np.finfo(float).eps * abs(f):
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            break
        P_new = project_rows_to_simplex(P_new)
        f_new, gamma_new = _objective(spec, P_new)
        g_new = _gradient(spec, P_new, gamma_new)
        G_new = g_new * scale
        s = (P_new - P).ravel()
        y = (G_new - G).ravel()
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 1e4 * step
        step = min(max(step, 1e-12), 1e12)
        P, f, g, G = P_new, f_new, g_new, G_new
        res = kkt_residual(P, g)
    if res > kkt_tol and max_iters > it:
        refined = _sqp(spec, P, max_iters - it)
        if refined is not None and refined[1] <= f + 8 * np.finfo(float).eps * abs(f):
            P, f, res, extra = refined
            it += extra
    if res > kkt_tol:
        polished = _polish(spec, P, f, res)
        if polished is not None:
            P, f, res = polished
    return P, f, res, it, res <= kkt_tol


def _sqp(spec: SystemSpec, P: np.ndarray, max_iters: int):
    M, N = spec.M, spec.N
    cap = spec.capacities * (1 - 1e-9)
    rows = np.kron(np.eye(M), np.ones(N))
    load_jac = np.hstack([np.eye(N) * a for a in spec.loads])

    def fun(x):
        f, _ = _objective(spec, x.reshape(M, N))
        return f if np.isfinite(f) else 1e300

    def jac(x):
        Q = x.reshape(M, N)
        gamma = np.minimum(spec.loads @ Q, spec.capacities * (1 - 1e-12))
        return _gradient(spec, Q, gamma).ravel()

    cons = [
        {"type": "eq", "fun": lambda x: rows @ x - 1.0, "jac": lambda x: rows},
        {"type": "ineq", "fun": lambda x: cap - load_jac @ x, "jac": lambda x: -load_jac},
    ]
    with np.errstate(all="ignore"):
        r = minimize(
            fun,
            P.ravel(),
            jac=jac,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * (M * N),
            constraints=cons,
            options={"ftol": 1e-16, "maxiter": max_iters},
        )
    Q = project_rows_to_simplex(r.x.reshape(M, N))
    Q = np.where(Q < 1e-14, 0.0, Q)
    Q /= Q.sum(axis=1, keepdims=True)
    f, gamma = _objective(spec, Q)
    if not np.isfinite(f):
        return None
    return Q, f, kkt_residual(Q, _gradient(spec, Q, gamma)), int(r.nit)


def _polish(spec: SystemSpec, P: np.ndarray, f: float, res: float):
    """Newton (Levenberg-Marquardt) solve of the stationarity equations on a guessed support.

    Near the optimum the possible decrease in ``U`` drops below round-off, so
    function-value line searches stall; the equations ``grad_ij = m_i`` on the
    support and unit row sums still have well-resolved residuals.  Two
    supports are tried: every positive entry, and positive entries whose
    gradient is already close to the row minimum.
    """
    g0 = _gradient(spec, P, spec.loads @ P)
    gap = g0 - g0.min(axis=1, keepdims=True)
    best = None
    seen = []
    for S in (P > SUPPORT_EPS, (P > SUPPORT_EPS) & (gap <= np.sqrt(res))):
        if any(np.array_equal(S, t) for t in seen) or not np.all(S.any(axis=1)):
            continue
        seen.append(S)
        out = _polish_on(spec, P, S, g0, f)
        if out is not None and out[2] < (best[2] if best else res):
            best = out
    return best


def _polish_on(spec: SystemSpec, P: np.ndarray, S: np.ndarray, g0: np.ndarray, f: float):
    rows = np.nonzero(S)[0]
    n = int(S.sum())

    def F(x):
        Q = np.zeros_like(P)
        Q[S] = x[:n]
        gamma = spec.loads @ Q
        g = _gradient(spec, Q, np.minimum(gamma, spec.capacities * (1 - 1e-12)))
        return np.concatenate([g[S] - x[n:][rows], Q.sum(axis=1) - 1.0])

    P0 = np.where(S, P, 0.0)
    P0 /= P0.sum(axis=1, keepdims=True)
    x0 = np.concatenate([P0[S], np.array([g0[i, S[i]].mean() for i in range(spec.M)])])
    with np.errstate(all="ignore"):
        sol = least_squares(F, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=100 * len(x0))
    Q = np.zeros_like(P)
    Q[S] = sol.x[:n]
    if not np.all(np.isfinite(Q)) or np.any(Q < 0):
        return None
    Q /= Q.sum(axis=1, keepdims=True)
    f_new, gamma = _objective(spec, Q)
    if not np.isfinite(f_new) or f_new > f + 8 * np.finfo(float).eps * abs(f):
        return None
    return Q, f_new, kkt_residual(Q, _gradient(spec, Q, gamma))


def _starting_points(spec: SystemSpec, restarts: int, rng: np.random.Generator):
    cap = spec.capacities
    proportional = np.tile(cap / cap.sum(), (spec.M, 1))
    yield proportional
    for _ in range(restarts - 1):
        P = rng.dirichlet(np.ones(spec.N), size=spec.M)
        alpha = 1.0
        while np.any(spec.loads @ (alpha * P + (1 - alpha) * proportional) >= cap):
            alpha *= 0.5
        yield alpha * P + (1 - alpha) * proportional


def solve_social_optimum(
    spec: SystemSpec,
    restarts: int = 32,
    max_iters: int = 5000,
    kkt_tol: float = 1e-8,
    seed: int = 0,
) -> OptimumResult:
    if spec.loads.sum() >= spec.capacities.sum():
        raise InfeasibleError("infeasible: total load exceeds capacity")
    rng = np.random.default_rng(seed)
    best = None
    total_iters = 0
    for k, P0 in enumerate(_starting_points(spec, max(restarts, 1), rng)):
        P, f, res, it, ok = _descend(spec, P0, max_iters, kkt_tol)
        total_iters += it
        # strict improvement only, so the lowest restart index wins ties
        if best is None or f < best[1] - 1e-14 * abs(best[1]):
            best = (P, f, res, ok)
    P, f, res, ok = best
    # clear projection round-off so unused queues read as exact zeros
    P = np.where(P < 1e-14, 0.0, P)
    P /= P.sum(axis=1, keepdims=True)
    f, _ = _objective(spec, P)
    return OptimumResult(
        P_star=P,
        gamma_star=spec.loads @ P,
        U_star=f,
        kkt_residual=res,
        restarts_used=max(restarts, 1),
        converged=ok,
        iterations=total_iters,
    )


def _simplex_grid(n: int, steps: int) -> np.ndarray:
    """All points of the ``n``-simplex whose coordinates are multiples of ``1/steps``."""
    pts = [c for c in itertools.combinations(range(steps + n - 1), n - 1)]
    bars = np.array(pts, dtype=int).reshape(len(pts), n - 1)
    edges = np.hstack([np.full((len(pts), 1), -1), bars, np.full((len(pts), 1), steps + n - 1)])
    return (np.diff(edges, axis=1) - 1) / steps


def grid_oracle(spec: SystemSpec, resolution: float) -> OptimumResult:
    """Exhaustive search over row-stochastic matrices on a uniform grid."""
    if spec.M > 3 or spec.N > 3:
        raise ValueError("grid oracle is limited to at most 3 classes and 3 queues")
    steps = int(round(1.0 / resolution))
    per_row = math.comb(steps + spec.N - 1, spec.N - 1)
    if per_row**spec.M > GRID_EVAL_LIMIT:
        raise ValueError(f"grid has {per_row ** spec.M:.3g} points, above the {GRID_EVAL_LIMIT:.0e} limit")
    rows = _simplex_grid(spec.N, steps)
    idx = np.array(list(itertools.product(range(len(rows)), repeat=spec.M)), dtype=np.int64)
    best_f, best_k = math.inf, None
    chunk = 200_000
    for start in range(0, len(idx), chunk):
        sel = idx[start : start + chunk]
        Ps = rows[sel]  # (K, M, N)
        gamma = np.einsum("m,kmn->kn", spec.loads, Ps)
        ok = np.all(gamma < spec.capacities, axis=1)
        D = np.full(gamma.shape, np.inf)
        for j, q in enumerate(spec.queues):
            D[ok, j] = q.value(gamma[ok, j])
        W = np.einsum("m,kmn->kn", spec.weights, Ps)
        with np.errstate(invalid="ignore"):
            U = np.where(ok, np.sum(np.where(W > 0, W * D, 0.0), axis=1), np.inf)
        k = int(np.argmin(U))
        if U[k] < best_f:
            best_f, best_k = float(U[k]), sel[k]
    if best_k is None:
        raise InfeasibleError("no feasible grid point")
    P = rows[best_k]
    return OptimumResult(
        P_star=P,
        gamma_star=spec.loads @ P,
        U_star=best_f,
        kkt_residual=math.nan,
        restarts_used=0,
        converged=True,
    )


def delay_order(D: np.ndarray, tol: float) -> list[int]:
    """Queue indices by ascending delay; near-ties broken by original index."""

    def cmp(a, b):
        if abs(D[a] - D[b]) <= tol:
            return a - b
        return -1 if D[a] < D[b] else 1

    return sorted(range(len(D)), key=functools.cmp_to_key(cmp))


def check_optimal_structure(spec: SystemSpec, P, tol: float = 1e-6) -> StructureReport:
    P = check_routing(spec, P)
    gamma = spec.loads @ P
    D = spec.delays(gamma)
    order = delay_order(D, tol)
    used = P > tol
    violations = []
    M, N = P.shape
    for i1, i2 in itertools.combinations(range(M), 2):
        for j1 in range(N):
            if not used[i1, j1]:
                continue
            for j2 in range(N):
                if j2 != j1 and used[i2, j2] and not D[j1] < D[j2] + tol:
                    violations.append(
                        ((i1, i2), (j1, j2), "higher-sensitivity class uses a costlier queue")
                    )
        for j1, j2 in itertools.combinations(range(N), 2):
            if used[i1, j1] and used[i1, j2] and used[i2, j1] and used[i2, j2]:
                violations.append(((i1, i2), (j1, j2), "two classes share two queues"))

    rank = {q: r for r, q in enumerate(order)}
    bounds = []
    prev = 0
    for i in range(M):
        positions = sorted(rank[j] for j in range(N) if used[i, j])
        if not positions:
            violations.append(((i, i), (), "class uses no queue above tolerance"))
            bounds.append(prev + 1)
            continue
        lo, hi = positions[0], positions[-1]
        if lo < prev - 1:
            violations.append(((i, i), (order[lo],), "class block starts before the previous block ends"))
        if positions != list(range(lo, hi + 1)):
            violations.append(((i, i), tuple(order[p] for p in positions), "class block has gaps"))
        bounds.append(hi + 1)
        prev = hi + 1
    if any(b2 < b1 for b1, b2 in zip(bounds, bounds[1:])):
        violations.append(((), (), "block bounds not monotone"))
    return StructureReport(queue_order=order, block_bounds=bounds, violations=violations)
