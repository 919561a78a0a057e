"""Scenario files: a JSON document bundling a system, optional prices, routing and simulation settings.

Serialization is canonical (fixed key order, full float precision), so
``Scenario.from_json(s.to_json()) == s``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuum import ContinuumSpec, ThresholdAllocation, distribution_from_dict, make_allocation
from .costs import cost_model_from_dict
from .model import ClassSpec, SystemSpec
from .simulator import SimConfig

FORMAT_VERSION = 1
DEFAULT_UNITS = {"time": "arbitrary time unit", "rate": "jobs per time unit", "price": "cost units per job"}


class ScenarioError(ValueError):
    """Malformed or dimensionally inconsistent scenario."""


def _tuple2(rows) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(x) for x in r) for r in rows)


@dataclass(frozen=True)
class Scenario:
    system: SystemSpec | ContinuumSpec
    prices: tuple[float, ...] | None = None
    routing: tuple[tuple[float, ...], ...] | ThresholdAllocation | None = None
    sim: SimConfig | None = None
    solver: dict = field(default_factory=dict)
    seed: int | None = None
    units: dict = field(default_factory=lambda: dict(DEFAULT_UNITS))
    name: str = ""

    def __post_init__(self):
        N = self.system.N if isinstance(self.system, ContinuumSpec) else self.system.N
        if self.prices is not None:
            object.__setattr__(self, "prices", tuple(float(c) for c in self.prices))
            if len(self.prices) != N:
                raise ScenarioError(f"prices has {len(self.prices)} entries for {N} queues")
        if self.routing is not None and not isinstance(self.routing, ThresholdAllocation):
            if isinstance(self.system, ContinuumSpec):
                raise ScenarioError("continuum scenarios take a threshold allocation as routing")
            R = _tuple2(self.routing)
            if len(R) != self.system.M or any(len(r) != N for r in R):
                raise ScenarioError(f"routing must be {self.system.M} x {N}")
            object.__setattr__(self, "routing", R)
        if isinstance(self.routing, ThresholdAllocation) and not self.is_continuum:
            raise ScenarioError("threshold allocations need a continuum system")

    @property
    def is_continuum(self) -> bool:
        return isinstance(self.system, ContinuumSpec)

    def routing_matrix(self) -> np.ndarray | None:
        if self.routing is None or isinstance(self.routing, ThresholdAllocation):
            return None
        return np.array(self.routing, dtype=float)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict = {"version": FORMAT_VERSION, "name": self.name, "units": dict(self.units)}
        s = self.system
        if isinstance(s, ContinuumSpec):
            out["system"] = {
                "kind": "continuum",
                "total_rate": s.total_rate,
                "sensitivity_distribution": s.distribution.to_dict(),
                "queues": [q.to_dict() for q in s.queues],
            }
        else:
            out["system"] = {
                "kind": "discrete",
                "classes": [
                    {"rate": c.rate, "sensitivity": c.sensitivity, "mean_job_size": c.mean_job_size}
                    for c in s.classes
                ],
                "queues": [q.to_dict() for q in s.queues],
            }
        out["prices"] = None if self.prices is None else list(self.prices)
        if isinstance(self.routing, ThresholdAllocation):
            out["routing"] = {
                "used_queue_order": list(self.routing.used_queue_order),
                "thresholds": list(self.routing.thresholds),
            }
        else:
            out["routing"] = None if self.routing is None else [list(r) for r in self.routing]
        out["sim"] = None if self.sim is None else self.sim.to_dict()
        out["solver"] = self.solver
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            version = d["version"]
            if version != FORMAT_VERSION:
                raise ScenarioError(f"unsupported scenario version {version!r}")
            sysd = d["system"]
            queues = tuple(cost_model_from_dict(q) for q in sysd["queues"])
            kind = sysd.get("kind", "discrete")
            if kind == "discrete":
                classes = tuple(
                    ClassSpec(float(c["rate"]), float(c["sensitivity"]), float(c.get("mean_job_size", 1.0)))
                    for c in sysd["classes"]
                )
                system = SystemSpec(classes, queues)
            elif kind == "continuum":
                system = ContinuumSpec(
                    float(sysd["total_rate"]),
                    distribution_from_dict(sysd["sensitivity_distribution"]),
                    queues,
                )
            else:
                raise ScenarioError(f"unknown system kind {kind!r}")
            routing = d.get("routing")
            if isinstance(routing, dict):
                if kind != "continuum":
                    raise ScenarioError("threshold allocations need a continuum system")
                routing = make_allocation(system, routing["used_queue_order"], routing["thresholds"])
            sim = d.get("sim")
            return cls(
                system=system,
                prices=d.get("prices"),
                routing=routing,
                sim=None if sim is None else SimConfig.from_dict(sim),
                solver=dict(d.get("solver") or {}),
                seed=d.get("seed"),
                units=dict(d.get("units") or DEFAULT_UNITS),
                name=d.get("name", ""),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc!r}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")
