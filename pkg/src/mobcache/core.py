"""Shared domain types: catalog, grid topology, cost constants and cache state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class MobcacheError(Exception):
    """Base class for every error raised by this package."""


class OutOfRegionError(MobcacheError, ValueError):
    pass


class CapacityError(MobcacheError, ValueError):
    pass


class ConfigError(MobcacheError, ValueError):
    pass


class TraceError(MobcacheError, ValueError):
    pass


class DivergenceError(MobcacheError, ArithmeticError):
    pass


class InstanceTooLargeError(MobcacheError, ValueError):
    pass


Point = tuple[float, float]


@dataclass(frozen=True)
class ContentCatalog:
    sizes: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=float).reshape(-1)
        if sizes.size < 1:
            raise ValueError("catalog needs at least one file")
        if not np.all(sizes > 0):
            raise ValueError("file sizes must be positive")
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def uniform(cls, file_count: int, size: float = 1.0) -> "ContentCatalog":
        return cls(np.full(file_count, float(size)))

    @property
    def file_count(self) -> int:
        return int(self.sizes.size)


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, p: Point) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def distance_to_boundary(self, p: Point) -> float:
        """Distance from an inside point to the nearest edge (0 on the edge)."""
        return min(p[0] - self.x0, self.x1 - p[0], p[1] - self.y0, self.y1 - p[1])

    def distance_outside(self, p: Point) -> float:
        """Euclidean distance from ``p`` to the rectangle; 0 when inside."""
        dx = max(self.x0 - p[0], 0.0, p[0] - self.x1)
        dy = max(self.y0 - p[1], 0.0, p[1] - self.y1)
        return math.hypot(dx, dy)

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)


@dataclass(frozen=True)
class NetworkTopology:
    """A uniform ``rows x cols`` grid with one SBS at each cell centre.

    Cell ``k = row * cols + col`` with row 0 at the lowest y. ``neighbor_sets``
    holds the intra-cell domain of every SBS.
    """

    rows: int
    cols: int
    bounds: Rect
    neighbor_sets: tuple[frozenset[int], ...]
    mbs_present: bool = True

    @classmethod
    def grid(
        cls,
        rows: int,
        cols: int,
        width: float = 100.0,
        height: float = 100.0,
        neighborhood: str = "moore",
    ) -> "NetworkTopology":
        if rows < 1 or cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if width <= 0 or height <= 0:
            raise ValueError("region must have positive extent")
        count = rows * cols
        if neighborhood == "moore":
            sets = []
            for k in range(count):
                r, c = divmod(k, cols)
                nb = {
                    rr * cols + cc
                    for rr in range(max(0, r - 1), min(rows, r + 2))
                    for cc in range(max(0, c - 1), min(cols, c + 2))
                }
                nb.discard(k)
                sets.append(frozenset(nb))
        elif neighborhood == "full":
            sets = [frozenset(set(range(count)) - {k}) for k in range(count)]
        elif neighborhood == "none":
            sets = [frozenset() for _ in range(count)]
        else:
            raise ValueError(f"unknown neighborhood {neighborhood!r}")
        return cls(rows, cols, Rect(0.0, 0.0, float(width), float(height)), tuple(sets))

    @property
    def sbs_count(self) -> int:
        return self.rows * self.cols

    @property
    def cell_width(self) -> float:
        return (self.bounds.x1 - self.bounds.x0) / self.cols

    @property
    def cell_height(self) -> float:
        return (self.bounds.y1 - self.bounds.y0) / self.rows

    def cell_rect(self, k: int) -> Rect:
        r, c = divmod(k, self.cols)
        w, h = self.cell_width, self.cell_height
        x0 = self.bounds.x0 + c * w
        y0 = self.bounds.y0 + r * h
        return Rect(x0, y0, x0 + w, y0 + h)

    @property
    def sbs_positions(self) -> np.ndarray:
        return np.array([self.cell_rect(k).center for k in range(self.sbs_count)])

    def sbs_position(self, k: int) -> Point:
        return self.cell_rect(k).center


def _grid_index(offset: float, step: float, n: int) -> int:
    # ceil(x/w) - 1 puts points on an interior line into the lower cell
    return min(n - 1, max(0, math.ceil(offset / step) - 1))


def assign_cell(position: Point, topology: NetworkTopology) -> int:
    """Index of the grid cell containing ``position``.

    Points on an interior grid line belong to the cell with the lower
    coordinate index.
    """
    b = topology.bounds
    x, y = float(position[0]), float(position[1])
    if not b.contains((x, y)):
        raise OutOfRegionError(f"position {position} outside region {b}")
    col = _grid_index(x - b.x0, topology.cell_width, topology.cols)
    row = _grid_index(y - b.y0, topology.cell_height, topology.rows)
    return row * topology.cols + col


def assign_cells(positions: np.ndarray, topology: NetworkTopology) -> np.ndarray:
    """Vectorised :func:`assign_cell` for an ``(n, 2)`` array."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    b = topology.bounds
    inside = (pts[:, 0] >= b.x0) & (pts[:, 0] <= b.x1) & (pts[:, 1] >= b.y0) & (pts[:, 1] <= b.y1)
    if not np.all(inside):
        bad = pts[~inside][0]
        raise OutOfRegionError(f"position {tuple(bad)} outside region {b}")
    col = np.clip(np.ceil((pts[:, 0] - b.x0) / topology.cell_width) - 1, 0, topology.cols - 1)
    row = np.clip(np.ceil((pts[:, 1] - b.y0) / topology.cell_height) - 1, 0, topology.rows - 1)
    return (row * topology.cols + col).astype(np.int64)


@dataclass(frozen=True)
class CostParams:
    """Cost constants in mW; defaults are the evaluation table values.

    ``sbs_retrieval`` and ``mbs_link`` may be scalars or per-SBS sequences.
    ``cache_cost`` is charged per cached file and scaled by the file size only
    for files whose size differs from 1.
    """

    cache_cost: float = 1.5
    sbs_retrieval: float | Sequence[float] = 180.0
    mbs_base: float = 13.0
    mbs_link: float | Sequence[float] = 370.0

    def __post_init__(self):
        for name in ("cache_cost", "sbs_retrieval", "mbs_base", "mbs_link"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise ValueError(f"{name} must be non-negative")

    def retrieval_vector(self, sbs_count: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sbs_retrieval, dtype=float), (sbs_count,)).copy()

    def worst_case_vector(self, sbs_count: int) -> np.ndarray:
        """``mbs_base + mbs_link[k]`` for every SBS."""
        link = np.broadcast_to(np.asarray(self.mbs_link, dtype=float), (sbs_count,))
        return self.mbs_base + link

    def caching_vector(self, catalog: ContentCatalog) -> np.ndarray:
        g = catalog.sizes
        return np.where(g == 1.0, self.cache_cost, self.cache_cost * g)


class CacheMatrix:
    """Binary ``K x M`` placement with per-SBS capacity accounting.

    Every mutation re-checks the capacity of the touched row, so an instance
    can never hold an infeasible placement.
    """

    def __init__(self, catalog: ContentCatalog, capacities, entries=None):
        self.catalog = catalog
        caps = np.asarray(capacities, dtype=float).reshape(-1)
        if np.any(caps < 0):
            raise ValueError("capacities must be non-negative")
        self.capacities = caps
        shape = (caps.size, catalog.file_count)
        if entries is None:
            self._c = np.zeros(shape, dtype=np.uint8)
        else:
            arr = np.asarray(entries)
            if arr.shape != shape:
                raise ValueError(f"entries shape {arr.shape} != {shape}")
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError("cache entries must be binary")
            self._c = arr.astype(np.uint8)
            for k in range(shape[0]):
                self._check(k)

    @classmethod
    def empty(cls, catalog: ContentCatalog, capacities) -> "CacheMatrix":
        return cls(catalog, capacities)

    @property
    def shape(self) -> tuple[int, int]:
        return self._c.shape

    @property
    def entries(self) -> np.ndarray:
        view = self._c.view()
        view.setflags(write=False)
        return view

    def __getitem__(self, kf) -> int:
        return int(self._c[kf])

    def occupancy(self, k: int) -> float:
        return float(self._c[k] @ self.catalog.sizes)

    def fits(self, k: int, f: int) -> bool:
        return self.occupancy(k) + self.catalog.sizes[f] <= self.capacities[k] + 1e-12

    def set(self, k: int, f: int, value: int = 1) -> None:
        old = self._c[k, f]
        self._c[k, f] = 1 if value else 0
        try:
            self._check(k)
        except CapacityError:
            self._c[k, f] = old
            raise

    def _check(self, k: int) -> None:
        if self.occupancy(k) > self.capacities[k] + 1e-12:
            raise CapacityError(
                f"SBS {k} occupancy {self.occupancy(k)} exceeds capacity {self.capacities[k]}"
            )

    def copy(self) -> "CacheMatrix":
        return CacheMatrix(self.catalog, self.capacities.copy(), self._c.copy())

    def cached_files(self, k: int) -> list[int]:
        return [int(f) for f in np.flatnonzero(self._c[k])]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CacheMatrix):
            return NotImplemented
        return np.array_equal(self._c, other._c) and np.array_equal(self.capacities, other.capacities)

    def __repr__(self) -> str:
        return f"CacheMatrix(shape={self.shape}, cached={int(self._c.sum())})"


def occupancy(cache: CacheMatrix, catalog: ContentCatalog, k: int) -> float:
    """Total size of the files cached at SBS ``k``."""
    return float(cache.entries[k] @ catalog.sizes)


class RequestEvent(NamedTuple):
    slot: int
    user_id: int
    file_id: int  # 1-based catalog index


class MobilitySample(NamedTuple):
    slot: int
    user_id: int
    x: float
    y: float

    @property
    def position(self) -> Point:
        return (self.x, self.y)


@dataclass
class Flags:
    """Soft warnings collected while processing (degenerate inputs, fallbacks)."""

    messages: list[str] = field(default_factory=list)

    def add(self, msg: str) -> None:
        self.messages.append(msg)

    def __bool__(self) -> bool:
        return bool(self.messages)
