"""Congestion-cost functions D(gamma) for a single queue.

Every model is strictly increasing and continuously differentiable on
``[0, capacity)`` and returns ``inf`` at or beyond ``capacity``.  Values and
derivatives accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


class CostModel:
    """Base class; subclasses define ``capacity``, ``_value`` and ``_derivative``."""

    family: str = ""

    @property
    def capacity(self) -> float:
        raise NotImplementedError

    @property
    def service_rate(self) -> float | None:
        """Exponential server rate used by the simulator, if the model has one."""
        return None

    def value(self, gamma):
        g = np.asarray(gamma, dtype=float)
        inside = g < self.capacity
        out = np.full(g.shape, np.inf)
        out[inside] = self._value(g[inside])
        return out if out.ndim else float(out)

    def derivative(self, gamma):
        g = np.asarray(gamma, dtype=float)
        inside = g < self.capacity
        out = np.full(g.shape, np.inf)
        out[inside] = self._derivative(g[inside])
        return out if out.ndim else float(out)

    def __call__(self, gamma):
        return self.value(gamma)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _value(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _derivative(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class MM1MeanDelay(CostModel):
    """Mean sojourn time of an M/M/1 queue, ``1 / (mu - gamma)``."""

    mu: float
    family = "mm1_mean_delay"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"service rate must be positive, got {self.mu}")

    @property
    def capacity(self) -> float:
        return float(self.mu)

    @property
    def service_rate(self) -> float:
        return float(self.mu)

    def _value(self, g):
        return 1.0 / (self.mu - g)

    def _derivative(self, g):
        return 1.0 / (self.mu - g) ** 2

    def to_dict(self) -> dict:
        return {"family": self.family, "mu": self.mu}


@dataclass(frozen=True)
class MM1TailProbability(CostModel):
    """Probability that an M/M/1 customer waits longer than ``T`` before service.

    ``D(gamma) = (gamma / mu) * exp((gamma - mu) * T)``.
    """

    mu: float
    T: float
    family = "mm1_tail_probability"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"service rate must be positive, got {self.mu}")
        if not self.T >= 0:
            raise ValueError(f"threshold T must be nonnegative, got {self.T}")

    @property
    def capacity(self) -> float:
        return float(self.mu)

    @property
    def service_rate(self) -> float:
        return float(self.mu)

    def _value(self, g):
        return g / self.mu * np.exp((g - self.mu) * self.T)

    def _derivative(self, g):
        return np.exp((g - self.mu) * self.T) * (1.0 + g * self.T) / self.mu

    def to_dict(self) -> dict:
        return {"family": self.family, "mu": self.mu, "T": self.T}


@dataclass(frozen=True)
class PSLoad(CostModel):
    """Unit-rate processor-sharing queue indexed by load: ``1 / (1 - rho)``."""

    family = "ps_load"

    @property
    def capacity(self) -> float:
        return 1.0

    @property
    def service_rate(self) -> float:
        return 1.0

    def _value(self, g):
        return 1.0 / (1.0 - g)

    def _derivative(self, g):
        return 1.0 / (1.0 - g) ** 2

    def to_dict(self) -> dict:
        return {"family": self.family}


@dataclass(frozen=True)
class Tabulated(CostModel):
    """Monotone cubic (PCHIP) interpolation of a measured cost curve.

    The grid must start at zero load; the last grid point is the capacity.
    """

    gamma: tuple[float, ...]
    cost: tuple[float, ...]
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)
    family = "tabulated"

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        d = np.asarray(self.cost, dtype=float)
        if g.ndim != 1 or g.shape != d.shape or g.size < 2:
            raise ValueError("tabulated grid needs two equal-length 1-D sequences of length >= 2")
        if g[0] != 0.0:
            raise ValueError("tabulated grid must start at zero load")
        if np.any(np.diff(g) <= 0) or np.any(np.diff(d) <= 0):
            raise ValueError("tabulated grid and costs must be strictly increasing")
        object.__setattr__(self, "gamma", tuple(float(x) for x in g))
        object.__setattr__(self, "cost", tuple(float(x) for x in d))
        object.__setattr__(self, "_interp", PchipInterpolator(g, d, extrapolate=False))

    @property
    def capacity(self) -> float:
        return self.gamma[-1]

    def _value(self, g):
        return self._interp(g)

    def _derivative(self, g):
        return self._interp.derivative()(g)

    def to_dict(self) -> dict:
        return {"family": self.family, "gamma": list(self.gamma), "cost": list(self.cost)}


_FAMILIES = {
    "mm1_mean_delay": lambda d: MM1MeanDelay(float(d["mu"])),
    "mm1_tail_probability": lambda d: MM1TailProbability(float(d["mu"]), float(d["T"])),
    "ps_load": lambda d: PSLoad(),
    "tabulated": lambda d: Tabulated(tuple(d["gamma"]), tuple(d["cost"])),
}


def cost_model_from_dict(data: dict) -> CostModel:
    try:
        make = _FAMILIES[data["family"]]
    except KeyError:
        raise ValueError(f"unknown cost model family: {data.get('family')!r}") from None
    return make(data)


class CostBank:
    """Vectorized evaluation of a fixed list of cost models on a flow vector.

    Closed-form families are evaluated with one numpy expression per family;
    other models fall back to their own methods.
    """

    def __init__(self, queues):
        queues = list(queues)
        self.capacity = np.array([q.capacity for q in queues], dtype=float)
        self._mm1 = np.array([j for j, q in enumerate(queues) if type(q) is MM1MeanDelay], dtype=np.intp)
        self._tail = np.array([j for j, q in enumerate(queues) if type(q) is MM1TailProbability], dtype=np.intp)
        self._ps = np.array([j for j, q in enumerate(queues) if type(q) is PSLoad], dtype=np.intp)
        fast = set(self._mm1) | set(self._tail) | set(self._ps)
        self._other = [(j, q) for j, q in enumerate(queues) if j not in fast]
        self._mu_mm1 = self.capacity[self._mm1]
        self._mu_tail = self.capacity[self._tail]
        self._T_tail = np.array([queues[j].T for j in self._tail], dtype=float)

    def value(self, gamma) -> np.ndarray:
        g = np.asarray(gamma, dtype=float)
        out = np.empty_like(g)
        with np.errstate(divide="ignore", over="ignore"):
            out[self._mm1] = 1.0 / (self._mu_mm1 - g[self._mm1])
            gt = g[self._tail]
            out[self._tail] = gt / self._mu_tail * np.exp((gt - self._mu_tail) * self._T_tail)
            out[self._ps] = 1.0 / (1.0 - g[self._ps])
        for j, q in self._other:
            out[j] = q.value(g[j])
        out[g >= self.capacity] = np.inf
        return out

    def derivative(self, gamma) -> np.ndarray:
        g = np.asarray(gamma, dtype=float)
        out = np.empty_like(g)
        with np.errstate(divide="ignore", over="ignore"):
            out[self._mm1] = 1.0 / (self._mu_mm1 - g[self._mm1]) ** 2
            gt = g[self._tail]
            out[self._tail] = np.exp((gt - self._mu_tail) * self._T_tail) * (1.0 + gt * self._T_tail) / self._mu_tail
            out[self._ps] = 1.0 / (1.0 - g[self._ps]) ** 2
        for j, q in self._other:
            out[j] = q.derivative(g[j])
        out[g >= self.capacity] = np.inf
        return out
