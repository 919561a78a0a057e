"""Problem instances and exact evaluation of flows, social cost and its gradient.

A :class:`SystemSpec` holds ``M`` customer classes (rate, delay sensitivity,
mean job size) and ``N`` queues (cost models).  Routing matrices are plain
``(M, N)`` numpy arrays with unit row sums.

With mean job sizes ``S_i`` the queue load is ``gamma_j = sum_i lam_i S_i p_ij``
and a class-``i`` customer at queue ``j`` incurs ``beta_i S_i D_j(gamma_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import CostBank, CostModel

ROW_SUM_TOL = 1e-12


class InfeasibleError(ValueError):
    """Raised when offered load cannot be carried at finite cost."""


@dataclass(frozen=True)
class ClassSpec:
    rate: float
    sensitivity: float
    mean_job_size: float = 1.0

    def __post_init__(self):
        for name in ("rate", "sensitivity", "mean_job_size"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"class {name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class SystemSpec:
    classes: tuple[ClassSpec, ...]
    queues: tuple[CostModel, ...]
    _arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "queues", tuple(self.queues))
        if not self.classes:
            raise ValueError("need at least one customer class")
        if not self.queues:
            raise ValueError("need at least one queue")
        beta = np.array([c.sensitivity for c in self.classes])
        if np.any(np.diff(beta) >= 0):
            raise ValueError(
                "class sensitivities must be strictly decreasing; merge tied classes first"
            )
        rate = np.array([c.rate for c in self.classes])
        size = np.array([c.mean_job_size for c in self.classes])
        cap = np.array([q.capacity for q in self.queues])
        for a in (rate, beta, size, cap):
            a.flags.writeable = False
        if rate @ size >= cap.sum():
            raise InfeasibleError("infeasible: total load exceeds capacity")
        object.__setattr__(
            self,
            "_arrays",
            {
                "rate": rate,
                "beta": beta,
                "size": size,
                "capacity": cap,
                "load": rate * size,
                "weight": beta * size * rate,
                "customer": beta * size,
                "bank": CostBank(self.queues),
            },
        )
        for k in ("load", "weight", "customer"):
            self._arrays[k].flags.writeable = False

    @classmethod
    def from_arrays(cls, rates, sensitivities, queues, job_sizes=None) -> SystemSpec:
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        sens = np.atleast_1d(np.asarray(sensitivities, dtype=float))
        sizes = np.ones_like(rates) if job_sizes is None else np.asarray(job_sizes, dtype=float)
        if not (rates.shape == sens.shape == sizes.shape):
            raise ValueError("rates, sensitivities and job sizes must have equal length")
        classes = tuple(ClassSpec(float(l), float(b), float(s)) for l, b, s in zip(rates, sens, sizes))
        return cls(classes, tuple(queues))

    @property
    def M(self) -> int:
        return len(self.classes)

    @property
    def N(self) -> int:
        return len(self.queues)

    @property
    def rates(self) -> np.ndarray:
        return self._arrays["rate"]

    @property
    def sensitivities(self) -> np.ndarray:
        return self._arrays["beta"]

    @property
    def job_sizes(self) -> np.ndarray:
        return self._arrays["size"]

    @property
    def capacities(self) -> np.ndarray:
        return self._arrays["capacity"]

    @property
    def loads(self) -> np.ndarray:
        """Per-class offered work rate ``lam_i S_i``."""
        return self._arrays["load"]

    @property
    def weights(self) -> np.ndarray:
        """Per-class cost weight ``beta_i S_i lam_i`` in the social cost."""
        return self._arrays["weight"]

    @property
    def customer_sensitivities(self) -> np.ndarray:
        """Per-customer delay multiplier ``beta_i S_i`` seen in the routing game."""
        return self._arrays["customer"]

    def delays(self, gamma) -> np.ndarray:
        return self._arrays["bank"].value(gamma)

    def delay_derivatives(self, gamma) -> np.ndarray:
        return self._arrays["bank"].derivative(gamma)


def check_routing(spec: SystemSpec, P) -> np.ndarray:
    """Validate ``P`` against ``spec`` and return it as a float array."""
    P = np.asarray(P, dtype=float)
    if P.shape != (spec.M, spec.N):
        raise ValueError(f"routing matrix has shape {P.shape}, expected {(spec.M, spec.N)}")
    if np.any(P < 0) or np.any(P > 1):
        raise ValueError("routing probabilities must lie in [0, 1]")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValueError("routing matrix rows must sum to 1")
    return P


def aggregate_rates(spec: SystemSpec, P) -> np.ndarray:
    P = check_routing(spec, P)
    return spec.loads @ P


def social_cost(spec: SystemSpec, P) -> float:
    """Total sensitivity-weighted congestion cost per unit time; ``inf`` if unstable."""
    P = check_routing(spec, P)
    gamma = spec.loads @ P
    if np.any(gamma >= spec.capacities):
        return float("inf")
    return float((spec.weights @ P) @ spec.delays(gamma))


def social_cost_gradient(spec: SystemSpec, P) -> np.ndarray:
    """``dU/dp_in = w_i D_n + a_i D'_n sum_k w_k p_kn`` with ``w = beta S lam``, ``a = lam S``."""
    P = check_routing(spec, P)
    gamma = spec.loads @ P
    if np.any(gamma >= spec.capacities):
        raise InfeasibleError("flows outside the cost-model domain")
    return _gradient(spec, P, gamma)


def _gradient(spec: SystemSpec, P: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    D = spec.delays(gamma)
    dD = spec.delay_derivatives(gamma)
    externality = (spec.weights @ P) * dD
    return np.outer(spec.weights, D) + np.outer(spec.loads, externality)


def effective_spec(spec: SystemSpec) -> SystemSpec:
    """Unit-job-size spec with rates ``lam_i S_i`` and sensitivities ``beta_i S_i``.

    Classes are re-sorted by the new sensitivities; exact ties are rejected.
    The result reproduces the routing game of ``spec`` (per-customer cost
    ``c_j + beta_i S_i D_j``).  The social cost of ``spec`` equals
    ``sum_i beta_hat_i lam_i p_ij D_j(gamma_j)`` with the original rates.
    """
    lam_hat = spec.loads
    beta_hat = spec.customer_sensitivities
    order = np.argsort(-beta_hat, kind="stable")
    if np.any(np.diff(beta_hat[order]) == 0):
        raise ValueError("transformed sensitivities beta_i * S_i are tied; merge those classes")
    classes = tuple(ClassSpec(float(lam_hat[i]), float(beta_hat[i])) for i in order)
    return SystemSpec(classes, spec.queues)
