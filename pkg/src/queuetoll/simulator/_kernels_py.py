"""Pure-Python versions of the service kernels (used when the extension is unavailable)."""
from __future__ import annotations

import heapq

import numpy as np


def fcfs(arrivals, service):
    dep = np.empty(len(arrivals))
    free_at = -np.inf
    for k, (a, s) in enumerate(zip(arrivals.tolist(), service.tolist())):
        free_at = max(free_at, a) + s
        dep[k] = free_at
    return dep


def lcfs_pr(arrivals, service):
    n = len(arrivals)
    dep = np.empty(n)
    stack: list[list] = []
    t = 0.0
    arr = arrivals.tolist() + [np.inf]
    svc = service.tolist()
    for k in range(n + 1):
        nxt = arr[k]
        while stack:
            job = stack[-1]
            if job[1] <= nxt - t:
                t += job[1]
                dep[job[0]] = t
                stack.pop()
            else:
                job[1] -= nxt - t
                break
        if k == n:
            break
        t = nxt
        stack.append([k, svc[k]])
    return dep


def ps(arrivals, service):
    n = len(arrivals)
    dep = np.empty(n)
    heap: list[tuple[float, int]] = []
    t = V = 0.0
    arr = arrivals.tolist() + [np.inf]
    svc = service.tolist()
    for k in range(n + 1):
        nxt = arr[k]
        while heap:
            reach = t + (heap[0][0] - V) * len(heap)
            if reach > nxt:
                break
            t = reach
            V, j = heapq.heappop(heap)
            dep[j] = t
        if k == n:
            break
        if heap:
            V += (nxt - t) / len(heap)
        t = nxt
        heapq.heappush(heap, (V + svc[k], k))
    return dep
