"""Pedestrian-density estimation for one cell.

Users standing in the transition band of the neighbouring cells are
clustered with k-means; a cluster whose centroid moved closer to the SBS
since the previous slot is counted as approaching. The estimate is::

    psi = sum(approaching cluster sizes) + users in cell - predicted leavers
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import NetworkTopology, Point, Rect, assign_cells


@dataclass
class ClusterState:
    centroids: np.ndarray  # (kappa, 2)
    labels: np.ndarray  # cluster index per point, -1 when filtered out
    counts: np.ndarray  # points per cluster
    loss_history: list[float] = field(default_factory=list)
    prev_centroids: np.ndarray | None = None
    user_ids: np.ndarray | None = None
    reduced: bool = False

    @property
    def kappa(self) -> int:
        return int(self.counts.size)

    @property
    def loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else 0.0


@dataclass(frozen=True)
class PedestrianStats:
    transited: int
    leavers: int

    def __post_init__(self):
        if self.transited < 0 or self.leavers < 0:
            raise ValueError("pedestrian counts must be non-negative")
        if self.leavers > self.transited:
            raise ValueError("more predicted leavers than users in the cell")


def _farthest_point_init(points: np.ndarray, kappa: int, first: int) -> np.ndarray:
    chosen = [first]
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, kappa):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _lloyd(points, centroids, max_iter, tol):
    labels, loss = kernels.kmeans_assign(points, centroids)
    history = [loss]
    for _ in range(max_iter):
        new = centroids.copy()
        for j in range(centroids.shape[0]):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, loss = kernels.kmeans_assign(points, centroids)
        if loss > history[-1] * (1.0 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means loss rose from {history[-1]!r} to {loss!r}")
        history.append(loss)
        if shift < tol:
            break
    return centroids, labels, history


def kmeans_cluster(
    points,
    kappa: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
    n_init: int = 4,
) -> ClusterState:
    """Lloyd's algorithm with farthest-point seeding.

    ``n_init`` restarts begin from distinct seeded first centres; the run
    with the lowest final loss is kept (earliest on ties). A ``kappa`` above
    the number of points is reduced to the point count and flagged.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 2))
    n = pts.shape[0]
    if n == 0:
        raise ValueError("k-means needs at least one point")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    reduced = kappa > n
    kappa = min(kappa, n)
    rng = np.random.default_rng(seed)
    starts = rng.permutation(n)[: max(1, min(n_init, n))]
    best = None
    for first in starts:
        init = np.ascontiguousarray(_farthest_point_init(pts, kappa, int(first)))
        cent, labels, hist = _lloyd(pts, init, max_iter, tol)
        if best is None or hist[-1] < best[2][-1]:
            best = (cent, labels, hist)
    cent, labels, hist = best
    counts = np.bincount(labels, minlength=kappa)
    return ClusterState(cent, labels, counts, hist, reduced=reduced)


def filter_clusters(state: ClusterState, min_size: int) -> ClusterState:
    """Drop clusters with fewer than ``min_size`` members and relabel the rest."""
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    keep = np.flatnonzero(state.counts >= min_size)
    remap = np.full(state.kappa, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    labels = np.where(state.labels >= 0, remap[np.maximum(state.labels, 0)], -1)
    prev = state.prev_centroids[keep] if state.prev_centroids is not None else None
    return ClusterState(
        state.centroids[keep],
        labels,
        state.counts[keep],
        list(state.loss_history),
        prev,
        state.user_ids,
        state.reduced,
    )


def approaching(centroid_now: Point, centroid_prev: Point, sbs_pos: Point) -> bool:
    """True iff the centroid's distance to the SBS shrank (ratio strictly below 1)."""
    dn = (centroid_now[0] - sbs_pos[0]) ** 2 + (centroid_now[1] - sbs_pos[1]) ** 2
    dp = (centroid_prev[0] - sbs_pos[0]) ** 2 + (centroid_prev[1] - sbs_pos[1]) ** 2
    if dp == 0.0:
        return False
    return dn < dp


def predict_leavers(users_in_cell, cell: Rect, margin: float) -> int:
    """Count users near the boundary whose last step, repeated once, exits the cell."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    count = 0
    for now, prev in users_in_cell:
        if cell.distance_to_boundary(now) > margin:
            continue
        nxt = (2.0 * now[0] - prev[0], 2.0 * now[1] - prev[1])
        if not cell.contains(nxt):
            count += 1
    return count


def estimate_density(approaching_counts, stats: PedestrianStats) -> float:
    if any(c < 0 for c in approaching_counts):
        raise ValueError("cluster counts must be non-negative")
    return max(0.0, float(sum(approaching_counts) + stats.transited - stats.leavers))


@dataclass
class CellEstimate:
    cell: int
    psi: float
    stats: PedestrianStats
    clusters: ClusterState | None  # after size filtering
    approaching: np.ndarray  # bool per filtered cluster
    members: list[np.ndarray]  # user ids per filtered cluster

    @property
    def approaching_counts(self) -> list[int]:
        return [int(n) for n, a in zip(self.clusters.counts, self.approaching) if a] if self.clusters else []

    @property
    def all_counts(self) -> list[int]:
        return [int(n) for n in self.clusters.counts] if self.clusters else []


def _rect_gap(points: np.ndarray, r: Rect) -> np.ndarray:
    dx = np.maximum.reduce([r.x0 - points[:, 0], np.zeros(len(points)), points[:, 0] - r.x1])
    dy = np.maximum.reduce([r.y0 - points[:, 1], np.zeros(len(points)), points[:, 1] - r.y1])
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class EstimatorConfig:
    band_fraction: float = 0.25
    min_cluster_size: int = 2
    kappa: int | None = None  # default: number of neighbouring cells
    max_iter: int = 100
    tol: float = 1e-6
    n_init: int = 4
    leaver_mode: str = "extrapolate"  # or "oracle"


def estimate_cells(
    user_ids: np.ndarray,
    now: np.ndarray,
    prev: np.ndarray,
    topology: NetworkTopology,
    config: EstimatorConfig = EstimatorConfig(),
    seed: int = 0,
    slot: int = 0,
    nxt: np.ndarray | None = None,
) -> list[CellEstimate]:
    """Density estimates for every cell from aligned current/previous positions.

    ``nxt`` (next-slot positions) is only consulted in ``oracle`` leaver mode.
    """
    now = np.asarray(now, dtype=float).reshape(-1, 2)
    prev = np.asarray(prev, dtype=float).reshape(-1, 2)
    user_ids = np.asarray(user_ids)
    cells = assign_cells(now, topology) if len(now) else np.zeros(0, dtype=np.int64)
    band = config.band_fraction * min(topology.cell_width, topology.cell_height)
    next_cells = None
    if config.leaver_mode == "oracle":
        if nxt is None:
            raise ValueError("oracle leaver mode needs next-slot positions")
        next_cells = assign_cells(nxt, topology)
    elif config.leaver_mode != "extrapolate":
        raise ValueError(f"unknown leaver mode {config.leaver_mode!r}")

    out = []
    for k in range(topology.sbs_count):
        rect = topology.cell_rect(k)
        inside = np.flatnonzero(cells == k)
        if next_cells is not None:
            leavers = int(np.sum(next_cells[inside] != k))
        else:
            leavers = predict_leavers(
                ((tuple(now[i]), tuple(prev[i])) for i in inside), rect, band
            )
        stats = PedestrianStats(int(inside.size), leavers)

        neighbours = topology.neighbor_sets[k]
        in_nb = np.isin(cells, list(neighbours)) if neighbours else np.zeros(len(cells), bool)
        cand = np.flatnonzero(in_nb & (_rect_gap(now, rect) <= band))
        clusters, flags, members = None, np.zeros(0, bool), []
        if cand.size:
            kappa = config.kappa or max(1, len(neighbours))
            ss = np.random.SeedSequence([int(seed), int(slot), int(k)])
            state = kmeans_cluster(
                now[cand], kappa, config.max_iter, config.tol,
                int(ss.generate_state(1)[0]), config.n_init,
            )
            state.user_ids = user_ids[cand]
            state.prev_centroids = np.array(
                [prev[cand][state.labels == j].mean(axis=0) if state.counts[j] else state.centroids[j]
                 for j in range(state.kappa)]
            ).reshape(-1, 2)
            clusters = filter_clusters(state, config.min_cluster_size)
            sbs = topology.sbs_position(k)
            flags = np.zeros(clusters.kappa, dtype=bool)
            for j in range(clusters.kappa):
                sel = clusters.labels == j
                members.append(user_ids[cand][sel])
                c_now = now[cand][sel].mean(axis=0)
                flags[j] = approaching(tuple(c_now), tuple(clusters.prev_centroids[j]), sbs)
        est = CellEstimate(k, 0.0, stats, clusters, flags, members)
        est.psi = estimate_density(est.approaching_counts, stats)
        out.append(est)
    return out


def aggregate_centroids(sets: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Merge per-SBS centroid sets into one shared set.

    The largest set is the reference; every other centroid is paired with
    its nearest reference centroid and the pairs are averaged with the
    cluster sizes as weights.
    """
    sets = [(np.asarray(c, float).reshape(-1, 2), np.asarray(n, float)) for c, n in sets if len(n)]
    if not sets:
        return np.zeros((0, 2))
    ref_idx = max(range(len(sets)), key=lambda i: (len(sets[i][1]), -i))
    ref = sets[ref_idx][0]
    acc = ref * sets[ref_idx][1][:, None]
    weight = sets[ref_idx][1].copy()
    for i, (cent, counts) in enumerate(sets):
        if i == ref_idx:
            continue
        labels, _ = kernels.kmeans_assign(np.ascontiguousarray(cent), np.ascontiguousarray(ref))
        for c, n, j in zip(cent, counts, labels):
            acc[j] += n * c
            weight[j] += n
    safe = np.where(weight > 0, weight, 1.0)
    return np.where(weight[:, None] > 0, acc / safe[:, None], ref)


def bracket_bounds(est: CellEstimate) -> tuple[float, float]:
    """Lower/upper density bounds: present minus leavers, plus every kept cluster."""
    base = est.stats.transited - est.stats.leavers
    return float(max(0, base)), float(max(0, sum(est.all_counts) + base))

