"""Discrete-event simulation of Bernoulli-routed Poisson classes feeding parallel queues.

Each replication draws Poisson arrivals per class, routes every job
independently according to its class row of ``P`` and runs one exact
single-server kernel per queue.  Statistics are taken over jobs that arrive
after the warmup, split into equal-width time batches; batch means pooled
over replications give the confidence intervals.

The waiting time of a job is its sojourn minus its own service time; the
tail metric is ``P(wait > T)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..costs import MM1TailProbability, Tabulated
from ..model import SystemSpec, check_routing
from .kernels import BACKEND, KERNELS
from .rng import stream

DISCIPLINES = ("FCFS", "PS", "LCFS_PR")
SIZE_FAMILIES = ("exponential", "deterministic")
Z95 = 1.959963984540054

__all__ = [
    "BACKEND",
    "SimConfig",
    "SimReport",
    "QueueComparison",
    "simulate",
    "compare_to_analytic",
]


@dataclass(frozen=True)
class SimConfig:
    discipline: str = "FCFS"
    horizon: float = 1e5
    warmup: float | None = None
    replications: int = 10
    seed: int = 0
    job_size_distribution: str | tuple[str, ...] = "exponential"
    tail_T: float = 1.0
    batches: int = 20

    def __post_init__(self):
        if self.discipline not in DISCIPLINES:
            raise ValueError(f"discipline must be one of {DISCIPLINES}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.warmup is not None and not (0 <= self.warmup < self.horizon):
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.batches < 2:
            raise ValueError("need at least 2 batches per replication")
        if not self.tail_T >= 0:
            raise ValueError("tail_T must be nonnegative")
        fams = (self.job_size_distribution,) if isinstance(self.job_size_distribution, str) else self.job_size_distribution
        if any(f not in SIZE_FAMILIES for f in fams):
            raise ValueError(f"job size distributions must be among {SIZE_FAMILIES}")

    @property
    def effective_warmup(self) -> float:
        return 0.1 * self.horizon if self.warmup is None else self.warmup

    def size_family(self, cls: int) -> str:
        if isinstance(self.job_size_distribution, str):
            return self.job_size_distribution
        return self.job_size_distribution[cls]

    def to_dict(self) -> dict:
        d = {
            "discipline": self.discipline,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "replications": self.replications,
            "seed": self.seed,
            "job_size_distribution": self.job_size_distribution
            if isinstance(self.job_size_distribution, str)
            else list(self.job_size_distribution),
            "tail_T": self.tail_T,
            "batches": self.batches,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if isinstance(d.get("job_size_distribution"), list):
            d["job_size_distribution"] = tuple(d["job_size_distribution"])
        return cls(**d)


@dataclass
class SimReport:
    """Pooled estimates; ``*_ci`` are 95% half-widths, ``*_se`` standard errors."""

    queue_mean_sojourn: np.ndarray
    queue_sojourn_ci: np.ndarray
    queue_cost: np.ndarray
    queue_cost_ci: np.ndarray
    queue_tail: np.ndarray
    queue_tail_ci: np.ndarray
    queue_arrival_rate: np.ndarray
    queue_arrival_rate_se: np.ndarray
    queue_mean_number: np.ndarray
    queue_mean_number_se: np.ndarray
    queue_samples: np.ndarray
    class_mean_sojourn: np.ndarray
    class_sojourn_ci: np.ndarray
    class_mean_cost: np.ndarray
    class_cost_ci: np.ndarray
    U: float
    U_ci: float
    events_processed: int
    divergent: list[bool] = field(default_factory=list)
    tail_T: np.ndarray | None = None
    backend: str = BACKEND

    def littles_law_z(self) -> np.ndarray:
        """``(L - gamma W) / se(L)`` per queue; NaN where a queue saw no jobs."""
        with np.errstate(invalid="ignore", divide="ignore"):
            diff = self.queue_mean_number - self.queue_arrival_rate * self.queue_mean_sojourn
            return diff / self.queue_mean_number_se


class QueueComparison(NamedTuple):
    queue: int
    analytic: float
    empirical: float | None
    z: float | None
    note: str = ""


def _batch_stats(values: np.ndarray):
    """Mean and 95% half-width over batch means (NaN batches skipped)."""
    v = values[np.isfinite(values)]
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.inf
    return float(v.mean()), float(Z95 * v.std(ddof=1) / math.sqrt(v.size))


def _generate(spec: SystemSpec, P: np.ndarray, cfg: SimConfig, rep: int):
    """Arrival time, class, queue and size of every job in one replication."""
    H = cfg.horizon
    times, classes, queues, sizes = [], [], [], []
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    for i in range(spec.M):
        g = stream(cfg.seed, rep, i, "arrivals")
        n = g.poisson(spec.rates[i] * H)
        t = np.sort(g.uniform(0.0, H, n))
        q = np.searchsorted(cum[i], stream(cfg.seed, rep, i, "routing").uniform(size=n), side="right")
        q = np.minimum(q, spec.N - 1)
        S = spec.job_sizes[i]
        if cfg.size_family(i) == "exponential":
            x = stream(cfg.seed, rep, i, "sizes").exponential(S, n)
        else:
            x = np.full(n, S)
        times.append(t)
        classes.append(np.full(n, i, dtype=np.intp))
        queues.append(q)
        sizes.append(x)
    return np.concatenate(times), np.concatenate(classes), np.concatenate(queues), np.concatenate(sizes)


def _replication(spec: SystemSpec, P: np.ndarray, cfg: SimConfig, rep: int, tail_T: np.ndarray, is_tail: np.ndarray):
    arr, cls, que, size = _generate(spec, P, cfg, rep)
    order = np.lexsort((arr, que))
    arr, cls, que, size = arr[order], cls[order], que[order], size[order]
    rates = np.array([q.service_rate for q in spec.queues])
    svc = size / rates[que]
    dep = np.empty_like(arr)
    bounds = np.searchsorted(que, np.arange(spec.N + 1))
    kernel = KERNELS[cfg.discipline]
    for j in range(spec.N):
        lo, hi = bounds[j], bounds[j + 1]
        if hi > lo:
            dep[lo:hi] = kernel(np.ascontiguousarray(arr[lo:hi]), np.ascontiguousarray(svc[lo:hi]))
    soj = dep - arr
    wait = soj - svc
    # per-job cost metric matching the queue's analytic model
    exceed = wait > tail_T[que]
    metric = np.where(is_tail[que], exceed.astype(float), soj / spec.job_sizes[cls])
    jobcost = spec.sensitivities[cls] * spec.job_sizes[cls] * metric

    w0, H, B = cfg.effective_warmup, cfg.horizon, cfg.batches
    edges = np.linspace(w0, H, B + 1)
    width = (H - w0) / B
    b = np.searchsorted(edges, arr, side="right") - 1
    keep = (b >= 0) & (b < B)
    kb, kq, kc = b[keep], que[keep], cls[keep]

    def tally(key, nkeys, weights):
        return np.bincount(key, weights=weights, minlength=nkeys)

    qkey = kb * spec.N + kq
    ckey = kb * spec.M + kc
    n_q = tally(qkey, B * spec.N, None).reshape(B, spec.N)
    n_c = tally(ckey, B * spec.M, None).reshape(B, spec.M)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = {
            "soj_q": tally(qkey, B * spec.N, soj[keep]).reshape(B, spec.N) / n_q,
            "cost_q": tally(qkey, B * spec.N, metric[keep]).reshape(B, spec.N) / n_q,
            "tail_q": tally(qkey, B * spec.N, exceed[keep].astype(float)).reshape(B, spec.N) / n_q,
            "soj_c": tally(ckey, B * spec.M, soj[keep]).reshape(B, spec.M) / n_c,
            "cost_c": tally(ckey, B * spec.M, jobcost[keep]).reshape(B, spec.M) / n_c,
        }
    out["rate_q"] = n_q / width
    out["U"] = tally(kb, B, jobcost[keep]) / width
    out["n_q"] = n_q
    # time-average number in system per batch window: overlap of [arr, dep] with the window
    area = np.zeros((B + 1, spec.N))
    for j in range(spec.N):
        lo, hi = bounds[j], bounds[j + 1]
        if hi == lo:
            continue
        a, d = arr[lo:hi], dep[lo:hi]
        csoj = np.concatenate([[0.0], np.cumsum(d - a)])
        longest = float((d - a).max())
        for k, x in enumerate(edges):
            # integral of N(t) over [0, x]: completed sojourns minus the part still ahead of x
            i0 = np.searchsorted(a, x)
            i_min = np.searchsorted(a, x - longest)
            tail = d[i_min:i0]
            area[k, j] = csoj[i0] - np.sum(np.maximum(tail - x, 0.0))
    out["L_q"] = np.diff(area, axis=0) / width
    return out, 2 * len(arr)


def simulate(spec: SystemSpec, P, cfg: SimConfig) -> SimReport:
    P = check_routing(spec, P)
    if any(isinstance(q, Tabulated) for q in spec.queues):
        raise ValueError("tabulated cost models have no service process to simulate")
    is_tail = np.array([isinstance(q, MM1TailProbability) for q in spec.queues])
    tail_T = np.array([q.T if isinstance(q, MM1TailProbability) else cfg.tail_T for q in spec.queues])
    gamma = spec.loads @ P
    divergent = [bool(g >= q.capacity) for g, q in zip(gamma, spec.queues)]

    reps, events = [], 0
    for r in range(cfg.replications):
        stats, ev = _replication(spec, P, cfg, r, tail_T, is_tail)
        reps.append(stats)
        events += ev
    pooled = {k: np.concatenate([s[k] for s in reps], axis=0) for k in reps[0] if k != "U"}
    U_batches = np.concatenate([s["U"] for s in reps])

    def columns(key, n):
        res = [_batch_stats(pooled[key][:, j]) for j in range(n)]
        return np.array([m for m, _ in res]), np.array([c for _, c in res])

    soj, soj_ci = columns("soj_q", spec.N)
    cost, cost_ci = columns("cost_q", spec.N)
    tail, tail_ci = columns("tail_q", spec.N)
    rate, rate_ci = columns("rate_q", spec.N)
    L, L_ci = columns("L_q", spec.N)
    csoj, csoj_ci = columns("soj_c", spec.M)
    ccost, ccost_ci = columns("cost_c", spec.M)
    U, U_ci = _batch_stats(U_batches)
    samples = pooled["n_q"].sum(axis=0).astype(np.int64)
    for arr_ in (soj, soj_ci, cost, cost_ci, tail, tail_ci, L, L_ci):
        arr_[samples == 0] = math.nan
    return SimReport(
        queue_mean_sojourn=soj,
        queue_sojourn_ci=soj_ci,
        queue_cost=cost,
        queue_cost_ci=cost_ci,
        queue_tail=tail,
        queue_tail_ci=tail_ci,
        queue_arrival_rate=rate,
        queue_arrival_rate_se=rate_ci / Z95,
        queue_mean_number=L,
        queue_mean_number_se=L_ci / Z95,
        queue_samples=samples,
        class_mean_sojourn=csoj,
        class_sojourn_ci=csoj_ci,
        class_mean_cost=ccost,
        class_cost_ci=ccost_ci,
        U=U,
        U_ci=U_ci,
        events_processed=events,
        divergent=divergent,
        tail_T=tail_T,
    )


def compare_to_analytic(spec: SystemSpec, P, cfg: SimConfig, report: SimReport | None = None) -> list[QueueComparison]:
    """Analytic ``D_j(gamma_j)`` against the simulated per-queue cost metric.

    For delay models the metric is sojourn divided by the job's mean size,
    for tail models the fraction of jobs waiting longer than ``T``.
    """
    P = check_routing(spec, P)
    rep = report if report is not None else simulate(spec, P, cfg)
    D = spec.delays(spec.loads @ P)
    out = []
    for j in range(spec.N):
        if rep.queue_samples[j] == 0:
            out.append(QueueComparison(j, float(D[j]), None, None, "no samples"))
            continue
        se = rep.queue_cost_ci[j] / Z95
        emp = float(rep.queue_cost[j])
        z = (emp - D[j]) / se if se > 0 else (0.0 if emp == D[j] else math.inf)
        note = "divergent" if rep.divergent[j] else ""
        out.append(QueueComparison(j, float(D[j]), emp, float(z), note))
    return out
