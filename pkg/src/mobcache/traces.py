"""Request and mobility traces.

Ratings files are read as a request stream: records are ordered by
timestamp and split into ``T`` equal-count slots. Mobility is synthetic:
random-waypoint walkers plus scheduled group migrations between adjacent
cells, with the migrations recorded as ground truth.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import MobilitySample, NetworkTopology, RequestEvent, TraceError, assign_cells

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceConfig:
    slot_count: int = 200
    slots_per_aggregation: int = 20
    user_count: int = 500
    file_count: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.slot_count >= self.slots_per_aggregation >= 1:
            raise ValueError("need slot_count >= slots_per_aggregation >= 1")
        if self.user_count < 1 or self.file_count < 1:
            raise ValueError("user and file counts must be positive")

    @property
    def period_count(self) -> int:
        return -(-self.slot_count // self.slots_per_aggregation)


@dataclass
class RequestTrace:
    events: list[RequestEvent]
    item_ids: list[int]  # original item id of file index 1..M
    users: list[int]
    skipped: int = 0
    skipped_lines: list[int] = field(default_factory=list)

    def __iter__(self) -> Iterator[RequestEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def file_count(self) -> int:
        return len(self.item_ids)


def _top(counter: Counter, n: int | None) -> set | None:
    if n is None:
        return None
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return {key for key, _ in ranked[:n]}


def load_requests(
    path,
    slot_count: int,
    delimiter: str = "::",
    top_files: int | None = None,
    top_users: int | None = None,
) -> RequestTrace:
    """Read ``user<d>item<d>rating<d>timestamp`` records into a slotted request stream.

    Optional ``top_files`` / ``top_users`` keep only the most-rated items and
    the most active users (ranked on the whole file, ties to the lower id).
    Records are sorted by timestamp (file order breaks ties) and record ``i``
    of ``N`` goes to slot ``i * T // N``. Item ids are compacted to
    ``1..M`` in ascending original-id order.
    """
    if slot_count < 1:
        raise ValueError("slot_count must be positive")
    records = []
    skipped_lines = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter)
            try:
                if len(parts) != 4:
                    raise ValueError
                user, item, ts = int(parts[0]), int(parts[1]), int(float(parts[3]))
                float(parts[2])
            except ValueError:
                skipped_lines.append(lineno)
                continue
            records.append((ts, lineno, user, item))
    if skipped_lines:
        log.warning("%s: skipped %d malformed records (first at line %d)", path, len(skipped_lines), skipped_lines[0])
    if not records:
        raise TraceError(f"{path}: no valid rating records")

    keep_items = _top(Counter(r[3] for r in records), top_files)
    keep_users = _top(Counter(r[2] for r in records), top_users)
    if keep_items is not None or keep_users is not None:
        records = [
            r for r in records
            if (keep_items is None or r[3] in keep_items) and (keep_users is None or r[2] in keep_users)
        ]
        if not records:
            raise TraceError(f"{path}: no records left after filtering")
    records.sort()
    item_ids = sorted({r[3] for r in records})
    index = {item: i + 1 for i, item in enumerate(item_ids)}
    n = len(records)
    events = [RequestEvent(i * slot_count // n, user, index[item]) for i, (_, _, user, item) in enumerate(records)]
    users = sorted({r[2] for r in records})
    return RequestTrace(events, item_ids, users, len(skipped_lines), skipped_lines[:20])


def synth_requests(
    config: TraceConfig,
    users: Sequence[int],
    zipf_exponent: float = 0.8,
    rate: float = 0.2,
) -> RequestTrace:
    """Poisson request arrivals per user and slot; files drawn from Zipf(s) over ``1..M``."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
    M = config.file_count
    weights = 1.0 / np.arange(1, M + 1) ** zipf_exponent
    p = weights / weights.sum()
    users = list(users)
    events = []
    for t in range(config.slot_count):
        n_req = rng.poisson(rate, size=len(users))
        for u, n in zip(users, n_req):
            for f in rng.choice(M, size=n, p=p):
                events.append(RequestEvent(t, u, int(f) + 1))
    return RequestTrace(events, list(range(1, M + 1)), sorted(users))


# -- mobility -------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterEvent:
    members: tuple[int, ...]
    source: int
    target: int
    start: int
    arrival: int  # first slot with most members inside the target cell, -1 if never


@dataclass
class MobilityTrace:
    user_ids: np.ndarray  # (N,)
    positions: np.ndarray  # (T, N, 2); NaN before a user appears
    events: list[ClusterEvent] = field(default_factory=list)

    @property
    def slot_count(self) -> int:
        return int(self.positions.shape[0])

    def present(self, t: int) -> np.ndarray:
        return ~np.isnan(self.positions[t, :, 0])

    def samples(self) -> Iterator[MobilitySample]:
        for t in range(self.slot_count):
            for i in np.flatnonzero(self.present(t)):
                x, y = self.positions[t, i]
                yield MobilitySample(t, int(self.user_ids[i]), float(x), float(y))

    def slot_view(self, t: int):
        """``(ids, now, prev)`` for users present at ``t``; ``prev`` falls back to ``now``."""
        idx = np.flatnonzero(self.present(t))
        now = self.positions[t, idx]
        if t == 0:
            prev = now.copy()
        else:
            prev = self.positions[t - 1, idx]
            prev = np.where(np.isnan(prev), now, prev)
        return self.user_ids[idx], now, prev

    def next_positions(self, t: int) -> np.ndarray:
        idx = np.flatnonzero(self.present(t))
        if t + 1 >= self.slot_count:
            return self.positions[t, idx]
        nxt = self.positions[t + 1, idx]
        return np.where(np.isnan(nxt), self.positions[t, idx], nxt)

    def occupancy(self, t: int, topology: NetworkTopology) -> np.ndarray:
        _, now, _ = self.slot_view(t)
        return np.bincount(assign_cells(now, topology), minlength=topology.sbs_count)

    @classmethod
    def from_samples(cls, samples: Iterable[MobilitySample], slot_count: int) -> "MobilityTrace":
        samples = list(samples)
        ids = sorted({s.user_id for s in samples})
        col = {u: i for i, u in enumerate(ids)}
        pos = np.full((slot_count, len(ids), 2), np.nan)
        for s in samples:
            if not 0 <= s.slot < slot_count:
                raise TraceError(f"mobility sample slot {s.slot} outside 0..{slot_count - 1}")
            pos[s.slot, col[s.user_id]] = (s.x, s.y)
        return cls(np.array(ids, dtype=np.int64), pos)


def _edge_neighbours(topology: NetworkTopology, k: int) -> list[int]:
    r, c = divmod(k, topology.cols)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < topology.rows and 0 <= cc < topology.cols:
            out.append(rr * topology.cols + cc)
    return out


def synth_mobility(
    config: TraceConfig,
    topology: NetworkTopology,
    cluster_arrival_rate: float = 0.05,
    step_scale: float = 1.0,
    user_ids: Sequence[int] | None = None,
    group_size: int = 5,
    spread: float = 0.02,
    pause: tuple[int, int] = (0, 3),
) -> MobilityTrace:
    """Random-waypoint walkers plus group migrations toward an adjacent cell.

    Walkers cover ``config.user_count`` users (or ``user_ids``). One group
    of ``group_size`` new users is spawned every ``round(1 / rate)`` slots
    in a cell edge-adjacent to a randomly chosen target; the group walks
    straight across the shared edge at one tenth of a cell side per slot,
    then pauses and turns into ordinary walkers. Lengths are in units of the
    cell side; ``step_scale = 0`` freezes every user.
    """
    if cluster_arrival_rate < 0 or step_scale < 0:
        raise ValueError("rates must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202]))
    T = config.slot_count
    b = topology.bounds
    side = min(topology.cell_width, topology.cell_height)
    lo = np.array([b.x0, b.y0])
    hi = np.array([b.x1, b.y1])

    walkers = list(user_ids) if user_ids is not None else list(range(config.user_count))
    interval = int(round(1.0 / cluster_arrival_rate)) if cluster_arrival_rate > 0 else 0
    starts = list(range(max(1, interval // 2), T - 6, interval)) if interval else []
    next_id = (max(walkers) + 1) if walkers else 0
    n_total = len(walkers) + group_size * len(starts)
    ids = np.array(walkers + list(range(next_id, next_id + group_size * len(starts))), dtype=np.int64)

    pos = np.full((T, n_total, 2), np.nan)
    cur = np.full((n_total, 2), np.nan)
    target = np.full((n_total, 2), np.nan)
    speed = np.zeros(n_total)
    wait = np.zeros(n_total, dtype=np.int64)
    velocity = np.zeros((n_total, 2))  # scripted straight-line motion
    scripted = np.zeros(n_total, dtype=np.int64)  # remaining scripted steps

    nw = len(walkers)
    cur[:nw] = rng.uniform(lo, hi, size=(nw, 2))
    target[:nw] = rng.uniform(lo, hi, size=(nw, 2))
    speed[:nw] = rng.uniform(0.05, 0.15, size=nw) * side

    step = 0.1 * side
    born = np.zeros(n_total, dtype=np.int64)
    spawn_at = np.full((n_total, 2), np.nan)
    groups = []
    for e, s in enumerate(starts):
        tgt = int(rng.integers(topology.sbs_count))
        src = int(rng.choice(_edge_neighbours(topology, tgt)))
        c_t, c_s = np.array(topology.cell_rect(tgt).center), np.array(topology.cell_rect(src).center)
        direction = (c_t - c_s) / np.linalg.norm(c_t - c_s)
        lateral = np.array([-direction[1], direction[0]])
        # start 4.5 steps before the shared edge, away from the corners
        centre = (c_t + c_s) / 2.0 - 4.5 * step * direction + lateral * rng.uniform(-0.3, 0.3) * side
        members = np.arange(nw + e * group_size, nw + (e + 1) * group_size)
        spawn_at[members] = centre + rng.normal(0.0, spread * side, size=(group_size, 2))
        velocity[members] = step * direction
        born[members] = s
        groups.append((members, src, tgt, s))

    for t in range(T):
        newborn = np.flatnonzero((born == t) & ~np.isnan(spawn_at[:, 0]))
        cur[newborn] = spawn_at[newborn]
        scripted[newborn] = 7  # five steps to cross the edge, two more inside
        active = ~np.isnan(cur[:, 0])
        if t > 0 and step_scale > 0:
            for i in np.flatnonzero(active):
                if i >= nw and born[i] == t:
                    continue
                if scripted[i] > 0:
                    cur[i] = cur[i] + step_scale * velocity[i] + rng.normal(0.0, 0.01 * side, size=2)
                    scripted[i] -= 1
                    if scripted[i] == 0:
                        target[i] = rng.uniform(lo, hi)
                        speed[i] = rng.uniform(0.05, 0.15) * side
                        wait[i] = rng.integers(5, 15)
                    continue
                if wait[i] > 0:
                    wait[i] -= 1
                    continue
                delta = target[i] - cur[i]
                dist = float(np.hypot(*delta))
                move = speed[i] * step_scale
                if dist <= move:
                    cur[i] = target[i]
                    target[i] = rng.uniform(lo, hi)
                    speed[i] = rng.uniform(0.05, 0.15) * side
                    wait[i] = rng.integers(pause[0], pause[1] + 1)
                else:
                    cur[i] = cur[i] + delta * (move / dist)
        cur[active] = np.clip(cur[active], lo, hi)
        pos[t] = cur

    events = []
    for members, src, tgt, s in groups:
        arrival = -1
        for t in range(s, T):
            inside = assign_cells(pos[t, members], topology) == tgt
            if inside.sum() * 2 > len(members):
                arrival = t
                break
        events.append(ClusterEvent(tuple(int(ids[i]) for i in members), src, tgt, s, arrival))
    return MobilityTrace(ids, pos, events)


# -- joining requests to cells ----------------------------------------------------


@dataclass
class CellRequests:
    slot: np.ndarray
    cell: np.ndarray
    file: np.ndarray  # 0-based file index
    user: np.ndarray
    flagged_users: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.slot.size)

    def counts(self, K: int, M: int, start: int, stop: int) -> np.ndarray:
        """``(K, M)`` request counts over slots ``[start, stop)``."""
        sel = (self.slot >= start) & (self.slot < stop)
        out = np.zeros((K, M))
        np.add.at(out, (self.cell[sel], self.file[sel]), 1.0)
        return out

    def slot_counts(self, k: int, M: int, start: int, stop: int) -> np.ndarray:
        """``(stop - start, M)`` per-slot request counts at cell ``k``."""
        sel = (self.slot >= start) & (self.slot < stop) & (self.cell == k)
        out = np.zeros((stop - start, M))
        np.add.at(out, (self.slot[sel] - start, self.file[sel]), 1.0)
        return out

    def by_slot_cell(self) -> dict[tuple[int, int], list[int]]:
        out: dict[tuple[int, int], list[int]] = {}
        for s, c, f in zip(self.slot, self.cell, self.file):
            out.setdefault((int(s), int(c)), []).append(int(f) + 1)
        return out


def slot_requests_by_cell(
    requests: Iterable[RequestEvent],
    mobility: MobilityTrace,
    topology: NetworkTopology,
    seed: int = 0,
) -> CellRequests:
    """Attribute each request to the requesting user's cell in that slot.

    A user missing from a slot keeps the cell of its latest earlier sample
    (or its first sample if none is earlier). Users never seen in the
    mobility trace get one seeded random cell and are flagged.
    """
    reqs = list(requests)
    T = mobility.slot_count
    col = {int(u): i for i, u in enumerate(mobility.user_ids)}
    # cell of every known user in every slot, forward/back filled
    cells = np.full((T, len(col)), -1, dtype=np.int64)
    for t in range(T):
        present = mobility.present(t)
        if present.any():
            cells[t, present] = assign_cells(mobility.positions[t, present], topology)
    for t in range(1, T):
        miss = cells[t] < 0
        cells[t, miss] = cells[t - 1, miss]
    for t in range(T - 2, -1, -1):
        miss = cells[t] < 0
        cells[t, miss] = cells[t + 1, miss]

    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    fallback: dict[int, int] = {}
    slot = np.empty(len(reqs), dtype=np.int64)
    cell = np.empty(len(reqs), dtype=np.int64)
    file = np.empty(len(reqs), dtype=np.int64)
    user = np.empty(len(reqs), dtype=np.int64)
    for n, r in enumerate(reqs):
        i = col.get(int(r.user_id))
        c = -1
        if i is not None:
            c = int(cells[min(r.slot, T - 1), i])
        if c < 0:
            if r.user_id not in fallback:
                fallback[r.user_id] = int(rng.integers(topology.sbs_count))
            c = fallback[r.user_id]
        slot[n], cell[n], file[n], user[n] = r.slot, c, r.file_id - 1, r.user_id
    if fallback:
        log.warning("%d users had no mobility samples; assigned random cells", len(fallback))
    return CellRequests(slot, cell, file, user, sorted(fallback))


# -- canonical CSV files ------------------------------------------------------------


def write_requests_csv(events: Iterable[RequestEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "user", "file"])
        for e in events:
            w.writerow([e.slot, e.user_id, e.file_id])


def read_requests_csv(path) -> list[RequestEvent]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slot", "user", "file"]:
            raise TraceError(f"{path}:1: expected header slot,user,file")
        for lineno, row in enumerate(reader, 2):
            try:
                out.append(RequestEvent(int(row[0]), int(row[1]), int(row[2])))
            except (ValueError, IndexError):
                raise TraceError(f"{path}:{lineno}: malformed request row {row!r}") from None
    return out


def write_mobility_csv(trace: MobilityTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "user", "x", "y"])
        for s in trace.samples():
            w.writerow([s.slot, s.user_id, repr(s.x), repr(s.y)])


def read_mobility_csv(path, slot_count: int | None = None) -> MobilityTrace:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slot", "user", "x", "y"]:
            raise TraceError(f"{path}:1: expected header slot,user,x,y")
        for lineno, row in enumerate(reader, 2):
            try:
                samples.append(MobilitySample(int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except (ValueError, IndexError):
                raise TraceError(f"{path}:{lineno}: malformed mobility row {row!r}") from None
    if not samples:
        raise TraceError(f"{path}: empty mobility file")
    T = slot_count if slot_count is not None else max(s.slot for s in samples) + 1
    return MobilityTrace.from_samples(samples, T)
