import io
import pytest
from delayadapt.conf.errors import DataError, EmptyTimeline
from delayadapt.util.ingest import Actuation, build_timeline, pair_actuations
from delayadapt.util.features import (Category, FeatureTable, HOUR_MS, MANIFEST, categorize, extract_features,
                                      hour_floor, hour_of_day, occupancy_time, stop_delay_label, waiting_time)
from conftest import parse


def act(on, off, on_state="red", off_state="red", detector="D1"):
    return Actuation(detector, on, off, on_state, off_state)


def test_occupancy_time():
    assert occupancy_time(act(1000, 3500)) == 2.5
    assert occupancy_time(act(0, 100)) == pytest.approx(0.1)


@pytest.mark.parametrize("on_state, off_state, expected", [
    ("red", "green", Category.RG),
    ("red", "red", Category.RR),
    ("green", "green", Category.GG),
    ("green", "red", Category.OTHER),
    ("red", "yellow", Category.RG),
    ("yellow", "yellow", Category.GG),
])
def test_categorize(on_state, off_state, expected):
    assert categorize(act(0, 1, on_state, off_state)) == expected


def test_waiting_time():
    assert waiting_time((0, 60000), [act(20000, 21000)]) == 40.0
    assert waiting_time((0, 60000), []) == 0.0
    assert waiting_time((0, 60000), [act(50000, 51000), act(10000, 11000)]) == 50.0
    assert waiting_time((0, 60000), [act(60000, 61000)]) == 0.0


def test_stop_delay_label():
    assert stop_delay_label([(0, 60000)], [act(30000, 31000), act(50000, 51000)]) == 20.0
    assert stop_delay_label([(0, 60000)], []) == 0.0
    assert stop_delay_label([(0, 60000), (90000, 150000)], [act(50000, 51000), act(140000, 141000)]) == 10.0


def test_clock_hours_respect_offset():
    assert hour_floor(HOUR_MS + 5) == HOUR_MS
    assert hour_floor(0, utc_offset_min=-30) == -HOUR_MS + 30 * 60_000
    assert hour_of_day(23 * HOUR_MS) == 23
    assert hour_of_day(23 * HOUR_MS, utc_offset_min=60) == 0


def _one_hour_events():
    return parse(["0,red_start,,P1", "60000,green_start,,P1", "90000,red_start,,P1",
                  "3600000,green_start,,P1",
                  "10000,det_on,D1,", "70000,det_off,D1,",
                  "20000,det_on,D1,", "30000,det_off,D1,",
                  "65000,det_on,A1,", "66000,det_off,A1,"])


def test_extract_counts_and_label(one_movement_config):
    events = _one_hour_events()
    timeline = build_timeline(events)
    table = extract_features(pair_actuations(events, timeline, one_movement_config), timeline, one_movement_config)
    assert len(table) == 1
    row = table.rows[0]
    assert (row.count_rg, row.count_rr, row.count_gg, row.count_other, row.total_count) == (1, 1, 1, 0, 3)
    assert row.occ_sum_s == pytest.approx(71.0)
    assert row.occ_mean_s == pytest.approx(71.0 / 3)
    # red 0-60000 holds arrivals at 10 s and 20 s; red 90000-3600000 holds none
    assert row.label_delay_s == pytest.approx(45.0)
    assert row.wait_mean_s == pytest.approx(25.0)
    assert row.speed_limit == 35.0 and row.hour_of_day == 0


def test_extract_empty_hour_and_two_movements(two_movement_config):
    events = parse(["0,green_start,,P1", "0,red_start,,P2", "7200000,red_start,,P1", "7200000,green_start,,P2"])
    timeline = build_timeline(events)
    table = extract_features([], timeline, two_movement_config)
    assert len(table) == 4
    assert {r.movement for r in table} == {"left_turn", "through"}
    assert all(r.total_count == 0 and r.label_delay_s == 0.0 for r in table)
    # the red spanning both hours is attributed to the hour of its end
    assert [r.wait_mean_s for r in table.for_movement("through")] == [0.0, 0.0]


def test_extract_needs_a_timeline(one_movement_config):
    with pytest.raises(EmptyTimeline):
        extract_features([], build_timeline([]), one_movement_config)


def test_shift_invariance(one_movement_config):
    shift = 5 * HOUR_MS
    events = _one_hour_events()
    moved = parse([f"{e.timestamp_ms + shift},{e.kind},{e.detector_id or ''},{e.phase_id or ''}" for e in events])
    tables = list()
    for evs in (events, moved):
        timeline = build_timeline(evs)
        tables.append(extract_features(pair_actuations(evs, timeline, one_movement_config), timeline,
                                       one_movement_config))
    a, b = tables[0].rows[0], tables[1].rows[0]
    assert b.hour_start_ms == a.hour_start_ms + shift
    for name in ("count_rg", "count_rr", "count_gg", "occ_mean_s", "occ_sum_s", "wait_mean_s", "label_delay_s"):
        assert getattr(a, name) == getattr(b, name)


def test_table_csv_round_trip(tmp_path, small_fleet):
    table = next(iter(small_fleet.values()))
    path = tmp_path / "features.csv"
    path.write_text(table.to_csv_text())
    again = FeatureTable.read_csv(str(path))
    assert again.keys() == table.keys()
    assert again.to_csv_text() == table.to_csv_text()
    assert again.X().shape == (len(table), len(MANIFEST))


def test_table_rejects_duplicate_keys(small_fleet):
    table = next(iter(small_fleet.values()))
    with pytest.raises(DataError):
        FeatureTable(table.rows + table.rows[:1])


def test_fleet_rows_obey_invariants(small_fleet):
    for table in small_fleet.values():
        for r in table:
            assert r.count_rg + r.count_rr + r.count_gg + r.count_other == r.total_count
            assert r.occ_sum_s >= r.occ_mean_s >= 0
            assert r.wait_mean_s >= 0 and r.label_delay_s >= 0
