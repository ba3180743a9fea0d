"""Three-tier request routing and the hit accounting behind cache efficiency."""

from __future__ import annotations

import enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import CacheMatrix, NetworkTopology

MBS = -1


class Tier(enum.IntEnum):
    LOCAL_HIT = 0
    INTRA_CELL_HIT = 1
    INTER_CELL_SBS_FETCH = 2
    MBS_FETCH = 3


class RoutingOutcome(NamedTuple):
    tier: Tier
    server: int  # SBS index, or MBS (-1)
    file: int
    slot: int = 0


def route_request(
    cache: CacheMatrix | np.ndarray,
    topology: NetworkTopology,
    local_sbs: int,
    file: int,
    slot: int = 0,
    prefer_sbs: bool = True,
) -> RoutingOutcome:
    """Local cache, then the lowest-index neighbour holding the file, then any
    other SBS (over the backhaul), then the MBS."""
    c = cache.entries if isinstance(cache, CacheMatrix) else np.asarray(cache)
    if c[local_sbs, file]:
        return RoutingOutcome(Tier.LOCAL_HIT, local_sbs, file, slot)
    for l in sorted(topology.neighbor_sets[local_sbs]):
        if c[l, file]:
            return RoutingOutcome(Tier.INTRA_CELL_HIT, l, file, slot)
    if prefer_sbs:
        holders = np.flatnonzero(c[:, file])
        if holders.size:
            return RoutingOutcome(Tier.INTER_CELL_SBS_FETCH, int(holders[0]), file, slot)
    return RoutingOutcome(Tier.MBS_FETCH, MBS, file, slot)


def tier_table(cache: CacheMatrix | np.ndarray, topology: NetworkTopology, prefer_sbs: bool = True) -> np.ndarray:
    """``K x M`` table of the tier every (local SBS, file) request resolves to."""
    c = (cache.entries if isinstance(cache, CacheMatrix) else np.asarray(cache)).astype(bool)
    K = c.shape[0]
    adj = np.zeros((K, K), dtype=bool)
    for k, nb in enumerate(topology.neighbor_sets):
        adj[k, list(nb)] = True
    intra = (adj.astype(np.int64) @ c.astype(np.int64)) > 0
    anywhere = np.broadcast_to(c.any(axis=0), c.shape)
    out = np.full(c.shape, int(Tier.MBS_FETCH), dtype=np.int8)
    if prefer_sbs:
        out[anywhere] = Tier.INTER_CELL_SBS_FETCH
    out[intra] = Tier.INTRA_CELL_HIT
    out[c] = Tier.LOCAL_HIT
    return out


def is_hit(tier: Tier, strict: bool = False) -> bool:
    if strict:
        return tier == Tier.LOCAL_HIT
    return tier in (Tier.LOCAL_HIT, Tier.INTRA_CELL_HIT)


def cache_efficiency(outcomes: Iterable[RoutingOutcome | Tier], strict: bool = False) -> float | None:
    """Fraction of requests served by an SBS cache without the backhaul.

    Returns ``None`` when there were no requests.
    """
    total = hits = 0
    for o in outcomes:
        tier = o.tier if isinstance(o, RoutingOutcome) else Tier(o)
        total += 1
        hits += is_hit(tier, strict)
    return hits / total if total else None


def cumulative_request_density(placements: Sequence, densities: Sequence) -> np.ndarray:
    """Running sum over periods of ``sum_{k,f} c[k,f] * lam[k,f]``."""
    if len(placements) != len(densities):
        raise ValueError("placement and density series must align")
    per_period = []
    for cache, lam in zip(placements, densities):
        c = cache.entries if isinstance(cache, CacheMatrix) else np.asarray(cache)
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("request densities must be non-negative")
        per_period.append(float((c * lam).sum()))
    return np.cumsum(np.array(per_period, dtype=float))
