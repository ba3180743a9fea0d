import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobcache.core import MobilitySample, NetworkTopology, RequestEvent, TraceError, assign_cells
from mobcache.traces import (
    MobilityTrace,
    TraceConfig,
    load_requests,
    read_mobility_csv,
    read_requests_csv,
    slot_requests_by_cell,
    synth_mobility,
    synth_requests,
    write_mobility_csv,
    write_requests_csv,
)


def ratings(tmp_path, lines, name="r.dat"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def test_trace_config_invariants():
    assert TraceConfig(200, 20).period_count == 10
    assert TraceConfig(45, 20).period_count == 3
    with pytest.raises(ValueError):
        TraceConfig(10, 20)
    with pytest.raises(ValueError):
        TraceConfig(10, 0)


def test_movielens_record_shape(tmp_path):
    path = ratings(tmp_path, ["1::1193::5::978300760", "1::661::3::978302109", "2::1193::4::978298413"])
    tr = load_requests(path, 3)
    assert tr.item_ids == [661, 1193]
    assert tr.events == [RequestEvent(0, 2, 2), RequestEvent(1, 1, 2), RequestEvent(2, 1, 1)]


def test_two_records_two_slots(tmp_path):
    tr = load_requests(ratings(tmp_path, ["1::5::1::20", "2::6::1::10"]), 2)
    assert [e.slot for e in tr.events] == [0, 1]
    assert [e.user_id for e in tr.events] == [2, 1]


def test_reload_is_identical(tmp_path):
    rng = np.random.default_rng(0)
    lines = [f"{rng.integers(1, 9)}::{rng.integers(1, 30)}::3::{rng.integers(0, 50)}" for _ in range(300)]
    path = ratings(tmp_path, lines)
    assert load_requests(path, 7).events == load_requests(path, 7).events


def test_malformed_records_are_skipped_and_counted(tmp_path):
    path = ratings(tmp_path, ["1::2::3::4", "garbage", "1::x::3::5", "2::2::4::6", "1::2::3"])
    tr = load_requests(path, 2)
    assert len(tr) == 2 and tr.skipped == 3 and tr.skipped_lines == [2, 3, 5]


def test_empty_inputs_are_errors(tmp_path):
    with pytest.raises(TraceError):
        load_requests(ratings(tmp_path, [""]), 5)
    with pytest.raises(TraceError):
        load_requests(ratings(tmp_path, ["nope", "still::nope"]), 5)


def test_custom_delimiter_and_top_filters(tmp_path):
    lines = ["1\t10\t5\t1", "1\t10\t5\t2", "2\t10\t5\t3", "2\t20\t5\t4", "3\t30\t5\t5", "1\t20\t1\t6"]
    tr = load_requests(ratings(tmp_path, lines), 2, delimiter="\t", top_files=2, top_users=2)
    assert tr.item_ids == [10, 20] and tr.users == [1, 2]
    assert len(tr) == 5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.integers(1, 60))
def test_quantile_slots_balanced(n, T):
    rng = np.random.default_rng(n * 100 + T)
    ts = rng.permutation(10 * n)[:n]
    path_lines = [f"{i % 7}::{i % 11}::1::{t}" for i, t in enumerate(ts)]
    with tempfile.NamedTemporaryFile("w", suffix=".dat", delete=False) as fh:
        fh.write("\n".join(path_lines))
    try:
        tr = load_requests(fh.name, T)
    finally:
        os.unlink(fh.name)
    counts = np.bincount([e.slot for e in tr.events], minlength=T)
    assert counts.max() - counts.min() <= 1
    slots = [e.slot for e in tr.events]
    assert slots == sorted(slots)


def test_synth_requests_deterministic_and_skewed():
    cfg = TraceConfig(100, 10, 50, 10, seed=3)
    a = synth_requests(cfg, range(50))
    assert a.events == synth_requests(cfg, range(50)).events
    counts = np.bincount([e.file_id for e in a.events], minlength=11)[1:]
    assert counts[0] > counts[-1]
    assert all(1 <= e.file_id <= 10 for e in a.events)


@pytest.fixture
def topo():
    return NetworkTopology.grid(2, 2)


def test_frozen_field(topo):
    tr = synth_mobility(TraceConfig(40, 10, 12, 5, seed=1), topo, 0.1, step_scale=0.0)
    for i in range(len(tr.user_ids)):
        seen = tr.positions[:, i][~np.isnan(tr.positions[:, i, 0])]
        assert np.all(seen == seen[0])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_positions_stay_in_region(seed):
    topo = NetworkTopology.grid(3, 2, 60, 90)
    tr = synth_mobility(TraceConfig(60, 10, 20, 5, seed=seed), topo, 0.1, step_scale=3.0)
    pos = tr.positions[~np.isnan(tr.positions[..., 0])]
    assert pos[:, 0].min() >= 0 and pos[:, 0].max() <= 60
    assert pos[:, 1].min() >= 0 and pos[:, 1].max() <= 90


def test_mobility_deterministic(topo):
    cfg = TraceConfig(50, 10, 15, 5, seed=9)
    a, b = synth_mobility(cfg, topo), synth_mobility(cfg, topo)
    assert np.array_equal(a.positions, b.positions, equal_nan=True) and a.events == b.events


def test_cluster_events_ground_truth(topo):
    tr = synth_mobility(TraceConfig(200, 20, 20, 5, seed=2), topo, 0.05)
    assert len(tr.events) == 10
    for ev in tr.events:
        assert len(ev.members) == 5 and ev.source != ev.target
        assert ev.start < ev.arrival
        cols = [int(np.flatnonzero(tr.user_ids == u)[0]) for u in ev.members]
        at_start = assign_cells(tr.positions[ev.start, cols], topo)
        assert np.all(at_start == ev.source)
        inside = assign_cells(tr.positions[ev.arrival, cols], topo) == ev.target
        assert inside.sum() >= 3
        before = assign_cells(tr.positions[ev.arrival - 1, cols], topo) == ev.target
        assert before.sum() < 3
        # spawned users do not exist before their event
        assert np.all(np.isnan(tr.positions[: ev.start, cols]))


def test_request_join_conservation_and_stationary(topo):
    cfg = TraceConfig(30, 10, 8, 4, seed=0)
    mob = synth_mobility(cfg, topo, 0.0, step_scale=0.0)
    reqs = synth_requests(cfg, range(8), rate=1.0)
    joined = slot_requests_by_cell(reqs.events, mob, topo)
    assert len(joined) == len(reqs.events)
    assert joined.counts(4, 4, 0, 30).sum() == len(reqs.events)
    for u in range(8):
        assert len(set(joined.cell[joined.user == u].tolist())) <= 1


def test_crossing_user_splits_at_crossing(topo):
    pos = np.full((4, 1, 2), np.nan)
    pos[:, 0] = [[10, 10], [40, 10], [60, 10], [90, 10]]
    mob = MobilityTrace(np.array([7]), pos)
    reqs = [RequestEvent(t, 7, 1) for t in range(4)]
    joined = slot_requests_by_cell(reqs, mob, topo)
    assert joined.cell.tolist() == [0, 0, 1, 1]


def test_missing_slots_and_unknown_users(topo):
    pos = np.full((5, 1, 2), np.nan)
    pos[1] = [80, 80]
    pos[3] = [10, 10]
    mob = MobilityTrace(np.array([1]), pos)
    reqs = [RequestEvent(t, 1, 1) for t in range(5)] + [RequestEvent(2, 99, 1), RequestEvent(4, 99, 2)]
    joined = slot_requests_by_cell(reqs, mob, topo, seed=4)
    assert joined.cell[:5].tolist() == [3, 3, 3, 0, 0]
    assert joined.flagged_users == [99]
    assert joined.cell[5] == joined.cell[6]
    again = slot_requests_by_cell(reqs, mob, topo, seed=4)
    assert again.cell.tolist() == joined.cell.tolist()


def test_csv_round_trips(tmp_path, topo):
    cfg = TraceConfig(20, 10, 6, 4, seed=5)
    reqs = synth_requests(cfg, range(6))
    write_requests_csv(reqs.events, tmp_path / "req.csv")
    assert (tmp_path / "req.csv").read_text().splitlines()[0] == "slot,user,file"
    assert read_requests_csv(tmp_path / "req.csv") == reqs.events
    mob = synth_mobility(cfg, topo, 0.1)
    write_mobility_csv(mob, tmp_path / "mob.csv")
    assert (tmp_path / "mob.csv").read_text().splitlines()[0] == "slot,user,x,y"
    back = read_mobility_csv(tmp_path / "mob.csv", 20)
    assert np.array_equal(back.user_ids, mob.user_ids)
    assert np.array_equal(back.positions, mob.positions, equal_nan=True)


def test_csv_errors_carry_line_numbers(tmp_path):
    bad = tmp_path / "req.csv"
    bad.write_text("slot,user,file\n0,1,2\n1,x,2\n")
    with pytest.raises(TraceError, match=":3:"):
        read_requests_csv(bad)
    bad.write_text("slot,user\n")
    with pytest.raises(TraceError, match=":1:"):
        read_requests_csv(bad)
    mob = tmp_path / "mob.csv"
    mob.write_text("slot,user,x,y\n")
    with pytest.raises(TraceError, match="empty"):
        read_mobility_csv(mob)
    with pytest.raises(TraceError):
        MobilityTrace.from_samples([MobilitySample(5, 1, 0.0, 0.0)], 3)
