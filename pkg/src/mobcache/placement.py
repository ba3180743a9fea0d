"""Network cost model and cache placement policies.

The cost of a placement ``c`` under a demand table ``lam[k, f]`` (expected
requests per slot for file ``f`` at SBS ``k``) is::

    D(c) = sum_{k,f} c[k,f] * cache_cost[f]
         + sum_{k,f} lam[k,f] * (c[k,f] * retrieval[k] + (1 - c[k,f]) * d[k,f])

where ``d[k,f] = (mbs_base + mbs_link[k])`` when no other SBS holds ``f`` and
0 otherwise. With ``lam[k, f] = psi[k] * p[f]`` this is the per-period
network cost minimised by the greedy placement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .core import (
    CacheMatrix,
    ContentCatalog,
    CostParams,
    InstanceTooLargeError,
    NetworkTopology,
)

ORACLE_LIMIT = 20


@dataclass
class PlacementProblem:
    catalog: ContentCatalog
    params: CostParams
    capacities: np.ndarray
    demand: np.ndarray
    topology: NetworkTopology | None = None

    def __post_init__(self):
        self.capacities = np.asarray(self.capacities, dtype=float).reshape(-1)
        self.demand = np.array(self.demand, dtype=float)
        if self.demand.ndim != 2:
            raise ValueError("demand table must be K x M")
        K, M = self.demand.shape
        if M != self.catalog.file_count:
            raise ValueError(f"demand has {M} files, catalog has {self.catalog.file_count}")
        if self.capacities.size != K:
            raise ValueError(f"{self.capacities.size} capacities for {K} SBSs")
        if self.topology is not None and self.topology.sbs_count != K:
            raise ValueError("topology SBS count does not match the demand table")
        if np.any(self.demand < 0) or not np.all(np.isfinite(self.demand)):
            raise ValueError("demand must be finite and non-negative")
        if np.any(self.capacities < 0):
            raise ValueError("capacities must be non-negative")

    @classmethod
    def from_densities(cls, catalog, params, capacities, psi, popularity, topology=None):
        lam = np.outer(np.asarray(psi, dtype=float), np.asarray(popularity, dtype=float))
        return cls(catalog, params, capacities, lam, topology)

    @property
    def sbs_count(self) -> int:
        return int(self.demand.shape[0])

    @property
    def file_count(self) -> int:
        return int(self.demand.shape[1])

    def kernel_args(self):
        K = self.sbs_count
        return (
            np.ascontiguousarray(self.demand),
            np.ascontiguousarray(self.params.caching_vector(self.catalog)),
            np.ascontiguousarray(self.params.retrieval_vector(K)),
            np.ascontiguousarray(self.params.worst_case_vector(K)),
            np.ascontiguousarray(self.catalog.sizes),
            np.ascontiguousarray(self.capacities),
        )

    def empty_cache(self) -> CacheMatrix:
        return CacheMatrix.empty(self.catalog, self.capacities)


@dataclass
class PlacementResult:
    cache: CacheMatrix
    cost: float
    iterations: int
    policy: str
    trace: list[float] = field(default_factory=list)
    explored: tuple[bool, ...] = ()


def _entries(cache) -> np.ndarray:
    return cache.entries if isinstance(cache, CacheMatrix) else np.asarray(cache)


def worst_case_cost(cache, k: int, f: int, params: CostParams) -> float:
    c = _entries(cache)
    others = np.delete(c[:, f], k)
    link = params.worst_case_vector(c.shape[0])[k]
    return float(np.prod(1 - others.astype(float)) * link)


def retrieval_cost(cache, k: int, f: int, psi: float, p: float, params: CostParams) -> float:
    if psi < 0 or p < 0:
        raise ValueError("densities must be non-negative")
    c = _entries(cache)
    ckf = float(c[k, f])
    alpha_s = params.retrieval_vector(c.shape[0])[k]
    return psi * p * (ckf * alpha_s + (1.0 - ckf) * worst_case_cost(c, k, f, params))


def network_cost(cache, problem: PlacementProblem) -> float:
    c = _entries(cache).astype(float)
    K = problem.sbs_count
    others = c.sum(axis=0)[None, :] - c
    d = problem.params.worst_case_vector(K)[:, None] * (others == 0)
    ret = problem.params.retrieval_vector(K)[:, None]
    caching = float((c * problem.params.caching_vector(problem.catalog)[None, :]).sum())
    retrieval = float((problem.demand * (c * ret + (1.0 - c) * d)).sum())
    return caching + retrieval


def marginal_cost(cache, problem: PlacementProblem, k: int, f: int) -> float:
    """Change in ``D`` from toggling ``c[k, f]``."""
    c = _entries(cache).copy()
    before = network_cost(c, problem)
    c[k, f] = 1 - c[k, f]
    return network_cost(c, problem) - before


def greedy_place(problem: PlacementProblem, backend: str | None = None) -> PlacementResult:
    """Repeatedly cache the feasible (SBS, file) pair with the lowest resulting cost.

    Only strictly cost-reducing additions are accepted; ties go to the lowest
    ``(k, f)``. Stops when no feasible pair lowers the cost.
    """
    impl = kernels if backend is None else kernels.backend(backend)
    args = problem.kernel_args()
    entries = np.zeros((problem.sbs_count, problem.file_count), dtype=np.uint8)
    moves = impl.greedy_fill(*args, entries)
    start = network_cost(entries * 0, problem)
    trace = [start]
    for _, _, delta in moves:
        trace.append(trace[-1] + delta)
    cache = CacheMatrix(problem.catalog, problem.capacities, entries)
    return PlacementResult(cache, network_cost(cache, problem), len(moves), "greedy", trace)


def decode_mask(mask: int, K: int, M: int) -> np.ndarray:
    n = K * M
    bits = [(mask >> (n - 1 - i)) & 1 for i in range(n)]
    return np.array(bits, dtype=np.uint8).reshape(K, M)


def exhaustive_place(problem: PlacementProblem, backend: str | None = None) -> PlacementResult:
    """Minimum-cost placement by enumerating all ``2^(K*M)`` binary matrices.

    Ties are broken by fewest cached files, then by the lexicographically
    smallest matrix (row-major).
    """
    K, M = problem.sbs_count, problem.file_count
    if K * M > ORACLE_LIMIT:
        raise InstanceTooLargeError(f"K*M = {K * M} exceeds the oracle limit of {ORACLE_LIMIT}")
    impl = kernels if backend is None else kernels.backend(backend)
    mask, _, feasible = impl.exhaustive_search(*problem.kernel_args())
    cache = CacheMatrix(problem.catalog, problem.capacities, decode_mask(mask, K, M))
    return PlacementResult(cache, network_cost(cache, problem), feasible, "oracle")


def _slots_for(catalog: ContentCatalog, capacity: float, order) -> list[int]:
    chosen, used = [], 0.0
    for f in order:
        g = catalog.sizes[f]
        if used + g <= capacity + 1e-12:
            chosen.append(int(f))
            used += g
    return chosen


def _result(catalog, capacities, rows, policy, problem, explored=()) -> PlacementResult:
    entries = np.zeros((len(rows), catalog.file_count), dtype=np.uint8)
    for k, files in enumerate(rows):
        entries[k, files] = 1
    cache = CacheMatrix(catalog, capacities, entries)
    cost = network_cost(cache, problem) if problem is not None else float("nan")
    return PlacementResult(cache, cost, 0, policy, explored=tuple(explored))


def _top_order(scores) -> np.ndarray:
    # highest score first, lower file index on ties
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def epsilon_greedy_place(
    estimates,
    m: int,
    epsilon: float,
    rng: np.random.Generator | int,
    catalog: ContentCatalog,
    capacities,
    problem: PlacementProblem | None = None,
) -> PlacementResult:
    """Per SBS: with probability ``epsilon`` cache ``m`` uniformly random files,
    otherwise the ``m`` files with the highest estimated popularity."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    caps = np.asarray(capacities, dtype=float)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    M = catalog.file_count
    m = min(m, M)
    rows, explored = [], []
    for k in range(est.shape[0]):
        explore = bool(rng.random() < epsilon)
        if explore:
            order = rng.permutation(M)
        else:
            order = _top_order(est[k])
        files = _slots_for(catalog, caps[k], order)[:m]
        rows.append(files)
        explored.append(explore)
    return _result(catalog, caps, rows, "egreedy", problem, explored)


def random_place(problem: PlacementProblem, rng: np.random.Generator | int) -> PlacementResult:
    """Fill every cache with a random subset: files are tried in a random order."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    rows = [
        _slots_for(problem.catalog, problem.capacities[k], rng.permutation(problem.file_count))
        for k in range(problem.sbs_count)
    ]
    return _result(problem.catalog, problem.capacities, rows, "random", problem)


def local_caching_place(
    estimates, catalog: ContentCatalog, capacities, problem: PlacementProblem | None = None
) -> PlacementResult:
    """Each SBS caches its own most-requested files, ignoring every other SBS."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    caps = np.asarray(capacities, dtype=float)
    rows = [_slots_for(catalog, caps[k], _top_order(est[k])) for k in range(est.shape[0])]
    return _result(catalog, caps, rows, "local", problem)


def full_info_place(problem: PlacementProblem) -> PlacementResult:
    """Placement computed on the realised demand of the period being evaluated."""
    if problem.sbs_count * problem.file_count <= ORACLE_LIMIT:
        res = exhaustive_place(problem)
    else:
        res = greedy_place(problem)
    res.policy = "fullinfo"
    return res


def check_placement(cache: CacheMatrix) -> None:
    """Assert binarity and per-SBS capacity; raises AssertionError on violation."""
    c = cache.entries
    assert np.all((c == 0) | (c == 1)), "non-binary cache entry"
    occ = c @ cache.catalog.sizes
    assert np.all(occ <= cache.capacities + 1e-9), f"capacity exceeded: {occ} > {cache.capacities}"


# -- plain-text instance files ------------------------------------------------

_SCALARS = ("cache_cost", "mbs_base")
_VECTORS = ("sizes", "capacities", "sbs_retrieval", "mbs_link")


def write_instance(problem: PlacementProblem, path) -> None:
    p = problem.params
    K, M = problem.sbs_count, problem.file_count

    def fmt(values) -> str:
        return " ".join(repr(float(v)) for v in np.atleast_1d(values))

    lines = [
        "# mobcache placement instance",
        f"sbs {K}",
        f"files {M}",
        f"sizes {fmt(problem.catalog.sizes)}",
        f"capacities {fmt(problem.capacities)}",
        f"cache_cost {fmt(p.cache_cost)}",
        f"sbs_retrieval {fmt(p.sbs_retrieval)}",
        f"mbs_base {fmt(p.mbs_base)}",
        f"mbs_link {fmt(p.mbs_link)}",
        "demand",
    ]
    lines += [fmt(row) for row in problem.demand]
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path) -> PlacementProblem:
    fields: dict[str, list[float]] = {}
    demand: list[list[float]] = []
    in_demand = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if in_demand:
                demand.append([float(v) for v in line.split()])
                continue
            key, *values = line.split()
            if key == "demand":
                in_demand = True
            elif key in ("sbs", "files") + _SCALARS + _VECTORS:
                fields[key] = [float(v) for v in values]
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    try:
        K, M = int(fields["sbs"][0]), int(fields["files"][0])
    except KeyError as exc:
        raise ValueError(f"{path}: missing {exc.args[0]!r}") from None
    if len(demand) != K or any(len(r) != M for r in demand):
        raise ValueError(f"{path}: demand table must be {K} rows of {M} values")

    def vec(name, default):
        v = fields.get(name, [default])
        return v[0] if len(v) == 1 else v

    def per(name, values, n):
        if len(values) not in (1, n):
            raise ValueError(f"{path}: {name} needs 1 or {n} values, got {len(values)}")
        return np.array(values * n if len(values) == 1 else values)

    catalog = ContentCatalog(per("sizes", fields.get("sizes", [1.0]), M))
    params = CostParams(
        cache_cost=vec("cache_cost", 1.5),
        sbs_retrieval=vec("sbs_retrieval", 180.0),
        mbs_base=vec("mbs_base", 13.0),
        mbs_link=vec("mbs_link", 370.0),
    )
    caps = fields.get("capacities")
    if caps is None:
        raise ValueError(f"{path}: missing 'capacities'")
    return PlacementProblem(catalog, params, per("capacities", caps, K), np.array(demand))
