# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-queue service kernels.

Every kernel takes arrival times (non-decreasing) and service requirements in
time units at the queue's own rate, and returns each job's departure time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def fcfs(const double[::1] arrivals, const double[::1] service):
    cdef Py_ssize_t n = arrivals.shape[0], k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dep = out
    cdef double free_at = -1e300
    for k in range(n):
        if arrivals[k] > free_at:
            free_at = arrivals[k]
        free_at += service[k]
        dep[k] = free_at
    return out


def lcfs_pr(const double[::1] arrivals, const double[::1] service):
    cdef Py_ssize_t n = arrivals.shape[0], k, top = 0, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dep = out
    stack_idx_arr = np.empty(n, dtype=np.intp)
    stack_rem_arr = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] sidx = stack_idx_arr
    cdef double[::1] srem = stack_rem_arr
    cdef double t = 0.0, nxt, avail
    for k in range(n + 1):
        nxt = arrivals[k] if k < n else 1e300
        # serve the top of the stack until the next arrival preempts it
        while top > 0:
            avail = nxt - t
            if srem[top - 1] <= avail:
                t += srem[top - 1]
                dep[sidx[top - 1]] = t
                top -= 1
            else:
                srem[top - 1] -= avail
                break
        if k == n:
            break
        t = nxt
        sidx[top] = k
        srem[top] = service[k]
        top += 1
    return out


cdef inline void _sift_up(double* key, Py_ssize_t* val, Py_ssize_t pos) noexcept nogil:
    cdef double k0 = key[pos]
    cdef Py_ssize_t v0 = val[pos], parent
    while pos > 0:
        parent = (pos - 1) >> 1
        if key[parent] <= k0:
            break
        key[pos] = key[parent]
        val[pos] = val[parent]
        pos = parent
    key[pos] = k0
    val[pos] = v0


cdef inline void _sift_down(double* key, Py_ssize_t* val, Py_ssize_t size) noexcept nogil:
    cdef Py_ssize_t pos = 0, child
    cdef double k0 = key[0]
    cdef Py_ssize_t v0 = val[0]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and key[child + 1] < key[child]:
            child += 1
        if key[child] >= k0:
            break
        key[pos] = key[child]
        val[pos] = val[child]
        pos = child
    key[pos] = k0
    val[pos] = v0


def ps(const double[::1] arrivals, const double[::1] service):
    """Processor sharing via a virtual clock that advances at rate 1/n(t)."""
    cdef Py_ssize_t n = arrivals.shape[0], k, size = 0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dep = out
    key_arr = np.empty(n, dtype=np.float64)
    val_arr = np.empty(n, dtype=np.intp)
    cdef double[::1] key = key_arr
    cdef Py_ssize_t[::1] val = val_arr
    cdef double t = 0.0, V = 0.0, nxt, reach
    for k in range(n + 1):
        nxt = arrivals[k] if k < n else 1e300
        while size > 0:
            reach = t + (key[0] - V) * size
            if reach > nxt:
                break
            t = reach
            V = key[0]
            dep[val[0]] = t
            size -= 1
            if size > 0:
                key[0] = key[size]
                val[0] = val[size]
                _sift_down(&key[0], &val[0], size)
        if k == n:
            break
        if size > 0:
            V += (nxt - t) / size
        t = nxt
        key[size] = V + service[k]
        val[size] = k
        size += 1
        _sift_up(&key[0], &val[0], size - 1)
    return out
