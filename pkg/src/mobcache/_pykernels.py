"""Pure-Python/numpy versions of the compiled kernels.

Results match ``_ckernels`` exactly: sums are accumulated in the same order
and ties are resolved by the same rules.
"""

import numpy as np


def kmeans_assign(points, centroids):
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    dx = points[:, 0, None] - centroids[None, :, 0]
    dy = points[:, 1, None] - centroids[None, :, 1]
    d = dx * dx + dy * dy
    labels = np.argmin(d, axis=1).astype(np.int64)  # first minimum = lowest index
    best = d[np.arange(points.shape[0]), labels]
    loss = 0.0
    for v in best:
        loss += v
    return labels, float(loss)


def greedy_fill(lam, cache_cost, retrieval, worst, sizes, capacities, cache):
    K, M = lam.shape
    saving = np.zeros(M)
    for k in range(K):
        saving = saving + lam[k] * worst[k]
    holders = cache.sum(axis=0).astype(np.int64)
    occ = np.zeros(K)
    for k in range(K):
        for f in range(M):
            if cache[k, f]:
                occ[k] += sizes[f]
    base = cache_cost[None, :] + lam * retrieval[:, None]
    moves = []
    while True:
        delta = np.where(holders[None, :] == 0, base - saving[None, :], base)
        ok = (cache == 0) & (occ[:, None] + sizes[None, :] <= capacities[:, None] + 1e-12)
        if not ok.any():
            break
        masked = np.where(ok, delta, np.inf)
        flat = int(np.argmin(masked))  # row-major first minimum = lowest (k, f)
        k, f = divmod(flat, M)
        best = float(masked[k, f])
        if not best < 0.0:
            break
        cache[k, f] = 1
        holders[f] += 1
        occ[k] += sizes[f]
        moves.append((k, f, best))
    return moves


def _bits(masks, n):
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return ((masks[:, None] >> shifts[None, :]) & np.uint64(1)).astype(bool)


def _chunk_costs(c, lam, cache_cost, retrieval, worst, sizes, capacities):
    # c: (batch, K, M) boolean
    K, M = lam.shape
    occ = np.zeros((c.shape[0], K))
    for f in range(M):
        occ = occ + np.where(c[:, :, f], sizes[f], 0.0)
    feasible = np.all(occ <= capacities[None, :] + 1e-12, axis=1)
    holders = c.sum(axis=1)
    cost = np.zeros(c.shape[0])
    for f in range(M):
        empty = holders[:, f] == 0
        for k in range(K):
            cached_term = cache_cost[f] + lam[k, f] * retrieval[k]
            miss_term = np.where(empty, lam[k, f] * worst[k], 0.0)
            cost = np.where(c[:, k, f], cost + cached_term, cost + miss_term)
    return feasible, cost


def exhaustive_search(lam, cache_cost, retrieval, worst, sizes, capacities, rel_tol=1e-9, chunk=1 << 16):
    K, M = lam.shape
    n = K * M
    total = 1 << n
    costs = np.empty(total)
    feas = np.empty(total, dtype=bool)
    for start in range(0, total, chunk):
        masks = np.arange(start, min(total, start + chunk), dtype=np.uint64)
        c = _bits(masks, n).reshape(-1, K, M)
        f_ok, cost = _chunk_costs(c, lam, cache_cost, retrieval, worst, sizes, capacities)
        feas[start:start + masks.size] = f_ok
        costs[start:start + masks.size] = cost
    best = costs[feas].min()
    tol = rel_tol * (best if best > 1.0 else 1.0)
    cand = np.flatnonzero(feas & (costs <= best + tol)).astype(np.uint64)
    counts = _bits(cand, n).sum(axis=1)
    chosen = int(cand[np.flatnonzero(counts == counts.min())[0]])
    return chosen, float(costs[chosen]), int(feas.sum())
