"""Period-by-period simulation: predict, place, route, record.

Each aggregation period of ``theta`` slots is evaluated against the
placement chosen at the end of the previous period. After evaluation the
pedestrian densities and the request model are updated from that period's
data and the policy places content for the next one. Period 0 runs on a
cold-start placement (uniform popularity, current occupancy).
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .core import (
    ConfigError,
    ContentCatalog,
    CostParams,
    NetworkTopology,
    TraceError,
)
from .demand import DegenerateDemandWarning, DensityEstimate, fit_request_density, request_batch
from .demand import proposition1_bracket
from .fedlearn import AggregationRound, LinearModel
from .mobility import EstimatorConfig, estimate_cells
from .placement import (
    ORACLE_LIMIT,
    PlacementProblem,
    check_placement,
    epsilon_greedy_place,
    exhaustive_place,
    full_info_place,
    greedy_place,
    local_caching_place,
    network_cost,
    random_place,
)
from .routing import Tier, tier_table
from .traces import (
    CellRequests,
    MobilityTrace,
    TraceConfig,
    load_requests,
    read_mobility_csv,
    read_requests_csv,
    slot_requests_by_cell,
    synth_mobility,
    synth_requests,
)

log = logging.getLogger(__name__)

POLICIES = ("frpl", "egreedy", "random", "local", "fullinfo", "oracle")
SCENARIOS = ("movielens", "synthetic", "csv")
METRICS_HEADER = ["period", "policy", "ce", "cum_lambda", "cost", "runtime_ms"]
DEFAULT_RATINGS = "data/ml-100k/ratings.dat"


@dataclass
class SimConfig:
    """Every runtime knob of a simulation; loaded from a flat YAML mapping."""

    seed: int | None = None
    policy: str = "frpl"
    label: str | None = None  # name in metrics/summary, defaults to the policy
    scenario: str = "movielens"
    ratings_path: str | None = None
    delimiter: str = "::"
    requests_path: str | None = None
    mobility_path: str | None = None
    rows: int = 2
    cols: int = 2
    width: float = 100.0
    height: float = 100.0
    neighborhood: str = "moore"
    capacity: float = 5.0
    file_size: float = 1.0
    cache_cost: float = 1.5
    sbs_retrieval: float = 180.0
    mbs_base: float = 13.0
    mbs_link: float = 370.0
    learning_rate: float = 0.003
    ridge: float = 1.0
    epsilon: float = 0.1
    m: int | None = None  # files per SBS for egreedy, default fills the cache
    theta: int = 20
    slot_count: int = 200
    user_count: int = 500
    file_count: int = 50
    fl_mode: str = "fedavg"
    fl_rounds: int = 50
    fl_local_steps: int = 20
    window: int = 50
    band_fraction: float = 0.25
    min_cluster_size: int = 2
    leaver_mode: str = "extrapolate"
    cluster_arrival_rate: float = 0.05
    step_scale: float = 1.0
    request_rate: float = 0.2
    zipf: float = 0.8
    strict_ce: bool = False
    prefer_sbs: bool = True
    timing: bool = False
    out_dir: str | None = None

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_mapping(cls, data: dict, base: "SimConfig | None" = None) -> "SimConfig":
        """Build a config from ``data``; keys it lacks come from ``base`` (or the defaults)."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat key: value mapping")
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, raw in data.items():
            values[key] = _coerce(key, raw, names[key].type)
        cfg = dataclasses.replace(base, **values) if base is not None else cls(**values)
        cfg.validate(require_seed=False)
        return cfg

    @classmethod
    def load(cls, path, base: "SimConfig | None" = None) -> "SimConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        return cls.from_mapping(data or {}, base)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self, require_seed: bool = True) -> None:
        err = []
        if require_seed and self.seed is None:
            err.append("seed is required")
        if self.seed is not None and self.seed < 0:
            err.append("seed must be non-negative")
        if self.policy not in POLICIES:
            err.append(f"policy must be one of {', '.join(POLICIES)}")
        if self.scenario not in SCENARIOS:
            err.append(f"scenario must be one of {', '.join(SCENARIOS)}")
        if self.scenario == "csv" and not (self.requests_path and self.mobility_path):
            err.append("csv scenario needs requests_path and mobility_path")
        if self.fl_mode not in ("fedavg", "paper-faithful"):
            err.append("fl_mode must be fedavg or paper-faithful")
        if self.neighborhood not in ("moore", "full", "none"):
            err.append("neighborhood must be moore, full or none")
        if self.leaver_mode not in ("extrapolate", "oracle"):
            err.append("leaver_mode must be extrapolate or oracle")
        for name in ("rows", "cols", "theta", "slot_count", "user_count", "file_count",
                     "fl_rounds", "fl_local_steps", "window", "min_cluster_size"):
            if getattr(self, name) < 1:
                err.append(f"{name} must be >= 1")
        for name in ("width", "height", "learning_rate", "file_size"):
            if not getattr(self, name) > 0:
                err.append(f"{name} must be positive")
        for name in ("capacity", "cache_cost", "sbs_retrieval", "mbs_base", "mbs_link",
                     "ridge", "step_scale", "request_rate", "zipf", "cluster_arrival_rate"):
            if getattr(self, name) < 0:
                err.append(f"{name} must be non-negative")
        if self.slot_count < self.theta:
            err.append("slot_count must be >= theta")
        if not 0.0 <= self.epsilon <= 1.0:
            err.append("epsilon must lie in [0, 1]")
        if self.m is not None and self.m < 1:
            err.append("m must be >= 1")
        if not 0.0 < self.band_fraction <= 0.5:
            err.append("band_fraction must lie in (0, 0.5]")
        if self.policy == "oracle" and self.rows * self.cols * self.file_count > ORACLE_LIMIT:
            err.append(f"oracle policy needs K*M <= {ORACLE_LIMIT}")
        if err:
            raise ConfigError("; ".join(err))

    @property
    def name(self) -> str:
        return self.label or self.policy

    def trace_key(self) -> tuple:
        """Fields that decide the request and mobility streams."""
        return (
            self.scenario, self.ratings_path, self.delimiter, self.requests_path, self.mobility_path,
            self.rows, self.cols, self.width, self.height, self.slot_count, self.theta,
            self.user_count, self.file_count, self.cluster_arrival_rate, self.step_scale,
            self.request_rate, self.zipf,
        )


def _coerce(key, raw, typ):
    typ = str(typ)
    if raw is None:
        if "None" in typ:
            return None
        raise ConfigError(f"{key} may not be empty")
    try:
        if typ.startswith("bool"):
            if not isinstance(raw, bool):
                raise ValueError
            return raw
        if isinstance(raw, bool):
            raise ValueError
        if typ.startswith("int"):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("str"):
            if not isinstance(raw, str):
                raise ValueError
            return raw
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {raw!r} as {typ}") from None
    return raw


PRESETS = {
    "desk": dict(
        scenario="movielens", rows=2, cols=2, slot_count=200, theta=20,
        user_count=500, file_count=50, capacity=5.0,
    ),
    "paper": dict(
        scenario="movielens", rows=3, cols=3, slot_count=3400, theta=20,
        user_count=6040, file_count=3952, capacity=50.0,
    ),
}


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return SimConfig(**{**PRESETS[name], **overrides})


# -- scenario construction ------------------------------------------------------


@dataclass
class Scenario:
    topology: NetworkTopology
    catalog: ContentCatalog
    requests: CellRequests
    mobility: MobilityTrace
    request_count: int
    notes: list[str] = field(default_factory=list)


def ratings_path(cfg: SimConfig) -> str:
    return cfg.ratings_path or os.environ.get("MOBCACHE_RATINGS") or DEFAULT_RATINGS


@functools.lru_cache(maxsize=8)
def _ratings(path: str, delimiter: str, T: int, U: int, M: int):
    try:
        return load_requests(path, T, delimiter=delimiter, top_files=M, top_users=U)
    except OSError as exc:
        raise TraceError(f"cannot read ratings {path}: {exc}") from None


@functools.lru_cache(maxsize=16)
def _build(key: tuple, seed: int, neighborhood: str) -> Scenario:
    (scenario, rpath, delimiter, req_path, mob_path, rows, cols, width, height,
     T, theta, U, M, arrival_rate, step_scale, request_rate, zipf) = key
    topo = NetworkTopology.grid(rows, cols, width, height, neighborhood=neighborhood)
    tcfg = TraceConfig(T, theta, U, M, seed)
    notes = []
    if scenario == "csv":
        try:
            events = read_requests_csv(req_path)
            mobility = read_mobility_csv(mob_path, T)
        except OSError as exc:
            raise TraceError(str(exc)) from None
        M = max((e.file_id for e in events), default=0)
        if M < 1:
            raise TraceError(f"{req_path}: no requests")
        for e in events:
            if not 0 <= e.slot < T or e.file_id < 1:
                raise TraceError(f"{req_path}: request {e} outside slots 0..{T - 1} or files 1..")
    else:
        if scenario == "movielens":
            trace = _ratings(rpath, delimiter, T, U, M)
            if trace.skipped:
                notes.append(f"skipped {trace.skipped} malformed rating records")
        else:
            trace = synth_requests(tcfg, range(U), zipf_exponent=zipf, rate=request_rate)
        events = trace.events
        M = trace.file_count
        mobility = synth_mobility(tcfg, topo, arrival_rate, step_scale, user_ids=trace.users)
    requests = slot_requests_by_cell(events, mobility, topo, seed)
    if requests.flagged_users:
        notes.append(f"{len(requests.flagged_users)} users without mobility got random cells")
    return Scenario(topo, ContentCatalog.uniform(M), requests, mobility, len(events), notes)


def build_scenario(cfg: SimConfig) -> Scenario:
    key = cfg.trace_key()
    if cfg.scenario == "movielens":
        key = (cfg.scenario, ratings_path(cfg)) + key[2:]
    return _build(key, int(cfg.seed), cfg.neighborhood)


# -- the run ----------------------------------------------------------------------


@dataclass
class MetricsRow:
    period: int
    policy: str
    ce: float | None
    cum_lambda: float
    cost: float
    runtime_ms: float | None = None
    psi: tuple[float, ...] = ()

    def csv_fields(self) -> list[str]:
        return [
            str(self.period),
            self.policy,
            "" if self.ce is None else repr(self.ce),
            repr(self.cum_lambda),
            repr(self.cost),
            "" if self.runtime_ms is None else f"{self.runtime_ms:.3f}",
        ]


@dataclass
class RunResult:
    config: SimConfig
    rows: list[MetricsRow]
    placements: list[np.ndarray]  # placement used in each period
    psi: list[np.ndarray]  # predicted density per cell, per period (prediction policies)
    popularity: list[np.ndarray]  # learned popularity per period (prediction policies)
    greedy_traces: list[list[float]]
    diagnostics: dict


def _period_bounds(cfg: SimConfig, n: int) -> tuple[int, int]:
    return n * cfg.theta, min((n + 1) * cfg.theta, cfg.slot_count)


class _Predictor:
    """The two learning tasks: cell densities from positions, popularity from requests."""

    def __init__(self, cfg: SimConfig, sc: Scenario):
        self.cfg, self.sc = cfg, sc
        self.est_cfg = EstimatorConfig(
            band_fraction=cfg.band_fraction,
            min_cluster_size=cfg.min_cluster_size,
            leaver_mode=cfg.leaver_mode,
        )
        self.fl = AggregationRound(cfg.fl_local_steps, cfg.learning_rate, cfg.fl_rounds, cfg.ridge)
        self.model: LinearModel | None = None
        self.bracket_violations = 0
        self.bracket_checks = 0
        self.detections = 0
        self.degenerate_periods = 0

    def densities(self, start: int, stop: int) -> np.ndarray:
        K = self.sc.topology.sbs_count
        total = np.zeros(K)
        for t in range(start, stop):
            ids, now, prev = self.sc.mobility.slot_view(t)
            nxt = self.sc.mobility.next_positions(t) if self.est_cfg.leaver_mode == "oracle" else None
            ests = estimate_cells(ids, now, prev, self.sc.topology, self.est_cfg, self.cfg.seed, t, nxt)
            for e in ests:
                total[e.cell] += e.psi
                self.detections += int(np.sum(e.approaching))
            self._check_bracket(ests)
        return total / (stop - start)

    def _check_bracket(self, ests) -> None:
        rates = np.ones(self.sc.catalog.file_count)
        for e in ests:
            lo, hi = proposition1_bracket(e.all_counts, e.stats.transited, e.stats.leavers, rates)
            lam = e.psi * rates / rates.sum()
            self.bracket_checks += 1
            if np.any(lam < lo - 1e-9) or np.any(lam > hi + 1e-9):
                self.bracket_violations += 1

    def popularity(self, stop: int) -> DensityEstimate | np.ndarray:
        cfg, sc = self.cfg, self.sc
        M = sc.catalog.file_count
        start = max(0, stop - cfg.window)
        batches = [request_batch(sc.requests.slot_counts(k, M, start, stop)) for k in range(sc.topology.sbs_count)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDemandWarning)
            fit = fit_request_density(batches, M, self.fl, mode=cfg.fl_mode, init=self.model)
        if fit.degenerate:
            self.degenerate_periods += 1
        else:
            self.model = fit.model
        return fit.rates


def _cold_density(sc: Scenario) -> np.ndarray:
    return sc.mobility.occupancy(0, sc.topology).astype(float)


def run(cfg: SimConfig, write: bool = True) -> RunResult:
    """Simulate every aggregation period of ``cfg`` and, if ``out_dir`` is set, write the outputs."""
    cfg.validate()
    sc = build_scenario(cfg)
    topo, catalog = sc.topology, sc.catalog
    K, M = topo.sbs_count, catalog.file_count
    if cfg.policy == "oracle" and K * M > ORACLE_LIMIT:
        raise ConfigError(f"oracle policy needs K*M <= {ORACLE_LIMIT}, trace has K*M = {K * M}")
    params = CostParams(cfg.cache_cost, cfg.sbs_retrieval, cfg.mbs_base, cfg.mbs_link)
    catalog = ContentCatalog.uniform(M, cfg.file_size)
    caps = np.full(K, float(cfg.capacity))
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 404]))
    m = cfg.m if cfg.m is not None else int(cfg.capacity // cfg.file_size)
    predictive = cfg.policy in ("frpl", "oracle")
    predictor = _Predictor(cfg, sc) if predictive else None
    periods = -(-cfg.slot_count // cfg.theta)

    def realised(n: int) -> np.ndarray:
        a, b = _period_bounds(cfg, n)
        return sc.requests.counts(K, M, a, b) / (b - a)

    seen = np.zeros((K, M))  # cumulative request counts for the count-based baselines
    greedy_traces: list[list[float]] = []
    capacity_checks = 0

    def place(n: int, psi: np.ndarray | None, pop: np.ndarray | None):
        nonlocal capacity_checks
        if cfg.policy in ("frpl", "oracle"):
            problem = PlacementProblem.from_densities(catalog, params, caps, psi, pop, topo)
            res = greedy_place(problem) if cfg.policy == "frpl" else exhaustive_place(problem)
            greedy_traces.append(list(res.trace))
        elif cfg.policy == "fullinfo":
            res = full_info_place(PlacementProblem(catalog, params, caps, realised(n), topo))
            greedy_traces.append(list(res.trace))
        elif cfg.policy == "egreedy":
            res = epsilon_greedy_place(seen, m, cfg.epsilon, rng, catalog, caps)
        elif cfg.policy == "local":
            res = local_caching_place(seen, catalog, caps)
        else:
            res = random_place(PlacementProblem(catalog, params, caps, np.zeros((K, M)), topo), rng)
        check_placement(res.cache)
        capacity_checks += 1
        return res.cache.entries.copy()

    cold_psi = _cold_density(sc)
    current = place(0, cold_psi, np.full(M, 1.0 / M))
    rows, placements, psis, pops = [], [], [], []
    cum = 0.0
    hit_tiers = (Tier.LOCAL_HIT,) if cfg.strict_ce else (Tier.LOCAL_HIT, Tier.INTRA_CELL_HIT)
    for n in range(periods):
        t0 = time.perf_counter()
        a, b = _period_bounds(cfg, n)
        counts = sc.requests.counts(K, M, a, b)
        lam = counts / (b - a)
        table = tier_table(current, topo, cfg.prefer_sbs)
        total = counts.sum()
        hits = counts[np.isin(table, hit_tiers)].sum()
        ce = float(hits / total) if total > 0 else None
        cost = network_cost(current, PlacementProblem(catalog, params, caps, lam, topo))
        cum += float((current * lam).sum())
        placements.append(current)
        seen += counts

        psi = None
        if n + 1 < periods:
            if predictive:
                psi = predictor.densities(a, b)
                pop = predictor.popularity(b)
                est = DensityEstimate.build(psi, pop)
                psis.append(psi)
                pops.append(est.popularity)
                current = place(n + 1, psi, est.popularity)
            else:
                current = place(n + 1, None, None)
        runtime = (time.perf_counter() - t0) * 1000.0 if cfg.timing else None
        rows.append(MetricsRow(n, cfg.name, ce, cum, cost, runtime,
                               tuple(float(v) for v in psi) if psi is not None else ()))

    diagnostics = {
        "policy": cfg.name,
        "seed": cfg.seed,
        "kernel_backend": _backend_name(),
        "periods": periods,
        "sbs_count": K,
        "file_count": M,
        "request_count": sc.request_count,
        "capacity_checks": capacity_checks,
        "notes": list(sc.notes),
    }
    if predictor is not None:
        diagnostics.update(
            bracket_checks=predictor.bracket_checks,
            bracket_violations=predictor.bracket_violations,
            approaching_detections=predictor.detections,
            degenerate_periods=predictor.degenerate_periods,
        )
    result = RunResult(cfg, rows, placements, psis, pops, greedy_traces, diagnostics)
    if write and cfg.out_dir:
        write_outputs(result, Path(cfg.out_dir))
    return result


def _backend_name() -> str:
    from . import kernels

    return kernels.BACKEND


# -- output files -----------------------------------------------------------------


def write_metrics(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def write_outputs(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(result.rows, out / "metrics.csv")
    if result.psi:
        with open(out / "psi.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["period", "cell", "psi"])
            for n, psi in enumerate(result.psi):
                for k, v in enumerate(psi):
                    w.writerow([n, k, repr(float(v))])
    if result.greedy_traces:
        with open(out / "greedy_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["placement", "iteration", "cost"])
            for n, trace in enumerate(result.greedy_traces):
                for i, v in enumerate(trace):
                    w.writerow([n, i, repr(float(v))])
    if result.config.timing:
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["period", "runtime_ms"])
            for r in result.rows:
                w.writerow([r.period, f"{r.runtime_ms:.3f}"])
    final = result.placements[-1]
    with open(out / "placement.json", "w") as fh:
        json.dump({"policy": result.config.name, "cache": final.astype(int).tolist()}, fh)
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(result.diagnostics, fh, indent=1, sort_keys=True)
    cfg = dataclasses.asdict(result.config)
    cfg["ratings_path"] = ratings_path(result.config) if result.config.scenario == "movielens" else cfg["ratings_path"]
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


# -- multi-config comparison ------------------------------------------------------


@dataclass
class Summary:
    policy: str
    seeds: int
    mean_ce: float
    final_cum_lambda: float
    mean_cost: float


def summarize(results: Sequence[RunResult], warmup: int = 1) -> list[Summary]:
    """Per-policy means over seeds, with the first ``warmup`` periods left out."""
    by: dict[str, list[RunResult]] = {}
    for r in results:
        by.setdefault(r.config.name, []).append(r)
    out = []
    for name, runs in by.items():
        ce, cost, cum = [], [], []
        for r in runs:
            rows = r.rows[warmup:] or r.rows
            vals = [x.ce for x in rows if x.ce is not None]
            ce.append(float(np.mean(vals)) if vals else float("nan"))
            cost.append(float(np.mean([x.cost for x in rows])))
            cum.append(r.rows[-1].cum_lambda)
        out.append(Summary(name, len(runs), float(np.mean(ce)), float(np.mean(cum)), float(np.mean(cost))))
    return out


def compare(configs: Sequence[SimConfig], seeds: Sequence[int], out_dir=None) -> tuple[list[RunResult], list[Summary]]:
    """Run every config under every seed; configs must describe the same traces."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    keys = {c.trace_key() for c in configs}
    if len(keys) != 1:
        raise ConfigError("configs describe different traces; refusing to compare")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("configs need distinct labels (set `label` when policies repeat)")
    results = []
    for c in configs:
        for s in seeds:
            sub = None
            if out_dir is not None:
                sub = str(Path(out_dir) / f"{c.name}-seed{s}")
            results.append(run(c.replace(seed=int(s), out_dir=sub)))
    summary = summarize(results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed"] + METRICS_HEADER)
            for r in results:
                for row in r.rows:
                    w.writerow([r.config.seed] + row.csv_fields())
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "seeds", "mean_ce", "final_cum_lambda", "mean_cost"])
            for s in sorted(summary, key=lambda s: -s.mean_ce):
                w.writerow([s.policy, s.seeds, repr(s.mean_ce), repr(s.final_cum_lambda), repr(s.mean_cost)])
    return results, summary
