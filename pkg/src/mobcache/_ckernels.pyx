# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: k-means assignment, greedy placement scan, exhaustive placement search.

Every routine mirrors ``_pykernels`` operation-for-operation (same summation
order, same tie rules) so both backends return identical results.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def kmeans_assign(const double[:, ::1] points, const double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k = centroids.shape[0]
    cdef Py_ssize_t i, j, best_j
    cdef double dx, dy, d, best_d, loss = 0.0
    labels_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    for i in range(n):
        best_j = 0
        best_d = 0.0
        for j in range(k):
            dx = points[i, 0] - centroids[j, 0]
            dy = points[i, 1] - centroids[j, 1]
            d = dx * dx + dy * dy
            if j == 0 or d < best_d:
                best_d = d
                best_j = j
        labels[i] = best_j
        loss += best_d
    return labels_arr, loss


def greedy_fill(
    const double[:, ::1] lam,
    const double[::1] cache_cost,
    const double[::1] retrieval,
    const double[::1] worst,
    const double[::1] sizes,
    const double[::1] capacities,
    cnp.uint8_t[:, ::1] cache,
):
    """Add the (k, f) pair with the most negative cost change until none improves.

    ``cache`` is updated in place. Returns the list of accepted
    ``(k, f, delta)`` moves in order.
    """
    cdef Py_ssize_t K = lam.shape[0]
    cdef Py_ssize_t M = lam.shape[1]
    cdef Py_ssize_t k, f, best_k, best_f
    cdef double delta, best, s
    cdef double[::1] occ = np.zeros(K, dtype=np.float64)
    cdef double[::1] saving = np.zeros(M, dtype=np.float64)
    cdef cnp.int64_t[::1] holders = np.zeros(M, dtype=np.int64)
    moves = []

    for f in range(M):
        s = 0.0
        for k in range(K):
            s = s + lam[k, f] * worst[k]
            if cache[k, f]:
                holders[f] += 1
        saving[f] = s
    for k in range(K):
        for f in range(M):
            if cache[k, f]:
                occ[k] += sizes[f]

    while True:
        best_k = -1
        best_f = -1
        best = 0.0
        for k in range(K):
            for f in range(M):
                if cache[k, f] or occ[k] + sizes[f] > capacities[k] + 1e-12:
                    continue
                delta = cache_cost[f] + lam[k, f] * retrieval[k]
                if holders[f] == 0:
                    delta = delta - saving[f]
                if best_k < 0 or delta < best:
                    best = delta
                    best_k = k
                    best_f = f
        if best_k < 0 or not best < 0.0:
            break
        cache[best_k, best_f] = 1
        holders[best_f] += 1
        occ[best_k] += sizes[best_f]
        moves.append((best_k, best_f, best))
    return moves


cdef inline double _mask_cost(
    cnp.uint64_t mask, Py_ssize_t K, Py_ssize_t M, Py_ssize_t n,
    const double[:, ::1] lam, const double[::1] cache_cost,
    const double[::1] retrieval, const double[::1] worst,
) nogil:
    cdef Py_ssize_t k, f, holders
    cdef double cost = 0.0
    cdef cnp.uint64_t one = 1
    for f in range(M):
        holders = 0
        for k in range(K):
            if (mask >> (n - 1 - (k * M + f))) & one:
                holders += 1
        for k in range(K):
            if (mask >> (n - 1 - (k * M + f))) & one:
                cost = cost + (cache_cost[f] + lam[k, f] * retrieval[k])
            elif holders == 0:
                cost = cost + lam[k, f] * worst[k]
    return cost


cdef inline bint _feasible(
    cnp.uint64_t mask, Py_ssize_t K, Py_ssize_t M, Py_ssize_t n,
    const double[::1] sizes, const double[::1] capacities,
) nogil:
    cdef Py_ssize_t k, f
    cdef double occ
    cdef cnp.uint64_t one = 1
    for k in range(K):
        occ = 0.0
        for f in range(M):
            if (mask >> (n - 1 - (k * M + f))) & one:
                occ = occ + sizes[f]
        if occ > capacities[k] + 1e-12:
            return False
    return True


cdef inline int _popcount(cnp.uint64_t x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def exhaustive_search(
    const double[:, ::1] lam,
    const double[::1] cache_cost,
    const double[::1] retrieval,
    const double[::1] worst,
    const double[::1] sizes,
    const double[::1] capacities,
    double rel_tol=1e-9,
):
    """Enumerate every binary placement; flat index 0 is the most significant bit.

    Returns ``(mask, cost, feasible_count)`` for the minimiser, ties within
    ``rel_tol`` broken by fewest cached files, then the smallest mask
    (lexicographically smallest matrix).
    """
    cdef Py_ssize_t K = lam.shape[0]
    cdef Py_ssize_t M = lam.shape[1]
    cdef Py_ssize_t n = K * M
    cdef cnp.uint64_t total = (<cnp.uint64_t>1) << n
    cdef cnp.uint64_t mask, best_mask = 0
    cdef double cost, best = 0.0, tol
    cdef bint found = False
    cdef long feasible = 0
    cdef int cnt, best_cnt = 0

    with nogil:
        mask = 0
        while mask < total:
            if _feasible(mask, K, M, n, sizes, capacities):
                feasible += 1
                cost = _mask_cost(mask, K, M, n, lam, cache_cost, retrieval, worst)
                if not found or cost < best:
                    best = cost
                    found = True
            mask += 1
        tol = rel_tol * (best if best > 1.0 else 1.0)
        found = False
        mask = 0
        while mask < total:
            if _feasible(mask, K, M, n, sizes, capacities):
                cost = _mask_cost(mask, K, M, n, lam, cache_cost, retrieval, worst)
                if cost <= best + tol:
                    cnt = _popcount(mask)
                    if not found or cnt < best_cnt:
                        best_cnt = cnt
                        best_mask = mask
                        found = True
            mask += 1
    return int(best_mask), _mask_cost(best_mask, K, M, n, lam, cache_cost, retrieval, worst), feasible
