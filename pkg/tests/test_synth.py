import io
import logging
from collections import Counter
from dataclasses import replace
import numpy as np
import pytest
from numpy.testing import assert_array_equal
from delayadapt.conf.errors import ConfigValidationError, EmptyRange
from delayadapt.util.ingest import build_timeline, pair_actuations, parse_event_log
from delayadapt.util.features import extract_features, hour_floor
from delayadapt.util.synth import (MovementScenario, MovementTiming, ScenarioConfig, TRUTH_COLUMNS, daily_profile,
                                   generate, make_fleet, nhpp_arrivals, queue_departures, red_arrival_delays,
                                   scenario_from_dict)


@pytest.fixture
def timing():
    # green 0-30 s, yellow 30-34 s, red 34-90 s
    return MovementTiming(origin_ms=0, cycle_ms=90_000, green_ms=30_000, yellow_ms=4_000)


def _pipeline(result):
    events = parse_event_log(io.StringIO(result.event_log_text()))
    timeline = build_timeline(events)
    pairing = pair_actuations(events, timeline, result.config, strict=True)
    return events, pairing, extract_features(pairing.actuations, timeline, result.config)


def test_timing_states_and_transitions(timing):
    assert [timing.state_at(t) for t in (0, 30_000, 34_000, 89_999, 90_000)] == \
        ["green", "yellow", "red", "red", "green"]
    assert timing.next_green(40_000) == 90_000
    assert timing.next_green(90_000) == 180_000
    assert timing.transitions(0, 90_000) == [(0, "green"), (30_000, "yellow"), (34_000, "red"), (90_000, "green")]
    no_yellow = MovementTiming(0, 90_000, 30_000, 0)
    assert [s for _, s in no_yellow.transitions(0, 90_000)] == ["green", "red", "green"]


def test_red_arrival_delay_is_time_to_green(timing):
    assert red_arrival_delays([80_000, 10_000, 31_000], timing) == [(90_000, 10.0)]


def test_queue_discharges_fifo_after_lost_time(timing):
    departures = queue_departures([10_000, 40_000, 41_000], timing, headway_ms=2_000, lost_ms=2_000)
    assert_array_equal(departures, [10_000, 92_000, 94_000])


def test_nhpp_arrivals(rng):
    assert nhpp_arrivals([0.0] * 24, 0, 3_600_000, 0, rng).size == 0
    times = nhpp_arrivals([3600.0] * 24, 0, 3_600_000, 0, np.random.default_rng(1))
    assert np.all(np.diff(times) >= 0)
    assert times.min() >= 0 and times.max() < 3_600_000
    assert abs(times.size - 3600) < 300
    again = nhpp_arrivals([3600.0] * 24, 0, 3_600_000, 0, np.random.default_rng(1))
    assert_array_equal(times, again)


def test_zero_demand_gives_signal_events_only():
    result = generate(ScenarioConfig(days=1, demand_scale=0.0))
    assert all(e.kind not in ("det_on", "det_off") for e in result.events)
    frame = result.truth.to_frame()
    assert list(frame.columns) == list(TRUTH_COLUMNS)
    assert (frame["true_delay_s"] == 0).all() and (frame["vehicle_count"] == 0).all()


def test_generation_is_deterministic(small_scenario):
    a, b = generate(small_scenario), generate(small_scenario)
    assert a.event_log_text() == b.event_log_text()
    assert a.truth.to_csv_text() == b.truth.to_csv_text()
    assert generate(replace(small_scenario, seed=4)).event_log_text() != a.event_log_text()


def test_pipeline_reproduces_ground_truth(small_scenario):
    result = generate(small_scenario)
    _, pairing, table = _pipeline(result)
    assert pairing.unmatched_on == 0 and pairing.malformed == 0 and pairing.out_of_span == 0
    assert len(table) == len(result.truth.rows)
    for row in table:
        truth = result.truth.delay(row.movement, row.approach, row.hour_start_ms)
        assert row.label_delay_s == pytest.approx(truth, abs=1e-9)


@pytest.mark.slow
def test_pipeline_reproduces_a_week_of_ground_truth():
    result = generate(ScenarioConfig(intersection_id="W0", days=7, seed=9))
    _, pairing, table = _pipeline(result)
    assert pairing.unmatched_on == 0 and pairing.malformed == 0
    assert len(table) == len(result.truth.rows)
    for row in table:
        truth = result.truth.delay(row.movement, row.approach, row.hour_start_ms)
        assert row.label_delay_s == pytest.approx(truth, abs=1e-9)


def test_stopbar_actuations_match_vehicle_counts(small_scenario):
    result = generate(small_scenario)
    stopbar = {d: (m.movement, m.approach) for m in result.config.movements for d in m.stopbar_detectors}
    counted = Counter((*stopbar[e.detector_id], hour_floor(e.timestamp_ms))
                      for e in result.events if e.kind == "det_on" and e.detector_id in stopbar)
    for movement, approach, hour, _, count in result.truth.rows:
        assert counted.get((movement, approach, hour), 0) == count


def test_delays_never_exceed_the_red_time(small_scenario):
    result = generate(small_scenario)
    longest_red = max((1 - m.green_split) * small_scenario.cycle_s - small_scenario.yellow_s
                      for m in small_scenario.movements)
    assert max(row[3] for row in result.truth.rows) <= longest_red + 1e-3


def test_oversaturation_is_flagged(caplog):
    cfg = ScenarioConfig(days=1, demand_scale=5.0)
    with caplog.at_level(logging.WARNING, logger="delayadapt"):
        result = generate(cfg)
    assert "exceeds capacity" in caplog.text
    assert result.truth.oversaturated


def test_scenario_validation():
    with pytest.raises(ConfigValidationError) as info:
        scenario_from_dict({"cycle_s": 6.0})
    assert info.value.field_path.startswith("movements[")
    with pytest.raises(ConfigValidationError) as info:
        scenario_from_dict({"cycles": 90})
    assert info.value.field_path == "cycles"
    with pytest.raises(ConfigValidationError):
        ScenarioConfig(movements=(MovementScenario("through", "NB", 0.4, 0.0, (1.0,) * 23),))


def test_scenario_fields_are_coerced_or_rejected():
    assert scenario_from_dict({"cycle_s": "75"}).cycle_s == 75.0
    assert scenario_from_dict({"speed_limit": 40}).speed_limit == 40.0
    with pytest.raises(ConfigValidationError) as info:
        scenario_from_dict({"cycle_s": "abc"})
    assert info.value.field_path == "cycle_s"
    with pytest.raises(ConfigValidationError) as info:
        scenario_from_dict({"demand_scale": [1.0]})
    assert info.value.field_path == "demand_scale"
    with pytest.raises(ConfigValidationError) as info:
        scenario_from_dict({"days": "7"})
    assert info.value.field_path == "days"
    with pytest.raises(ConfigValidationError):
        ScenarioConfig(cycle_s="abc")
    with pytest.raises(ConfigValidationError):
        ScenarioConfig(seed=True)


def test_scenario_dict_round_trip(small_scenario):
    assert scenario_from_dict(small_scenario.to_dict()) == small_scenario
    assert len(daily_profile(100.0)) == 24


def test_fleet_draws_within_ranges():
    base = ScenarioConfig(days=1)
    fleet = make_fleet(base, 5, {"cycle_s": [80, 120], "demand_scale": [0.5, 0.5]}, seed=2)
    assert [c.intersection_id for c in fleet] == [f"SYN-{i:02d}" for i in range(5)]
    assert all(80 <= c.cycle_s <= 120 and c.demand_scale == 0.5 for c in fleet)
    assert len({c.seed for c in fleet}) == 5
    assert make_fleet(base, 5, {"cycle_s": [80, 120]}, seed=2) == \
        make_fleet(base, 5, {"cycle_s": [80, 120]}, seed=2)


def test_degenerate_fleet_differs_only_by_identity():
    a, b = make_fleet(ScenarioConfig(days=1), 2, {"cycle_s": [100, 100]}, seed=0)
    assert a.cycle_s == b.cycle_s == 100
    assert replace(a, intersection_id="x", seed=0) == replace(b, intersection_id="x", seed=0)


def test_fleet_errors():
    base = ScenarioConfig(days=1)
    with pytest.raises(EmptyRange):
        make_fleet(base, 3, {"cycle_s": [120, 80]})
    with pytest.raises(ConfigValidationError):
        make_fleet(base, 1, {})
    with pytest.raises(ConfigValidationError):
        make_fleet(base, 3, {"lanes": [1, 2]})
