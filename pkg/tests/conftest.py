# Shared fixtures
import io
import logging
import numpy as np
import pytest
from delayadapt.util.ingest import (IntersectionConfig, MovementConfig, parse_event_log, build_timeline,
                                    pair_actuations)
from delayadapt.util.features import extract_features
from delayadapt.util.synth import ScenarioConfig, generate, make_fleet


@pytest.fixture(autouse=True)
def _quiet_logger():
    logger = logging.getLogger('delayadapt')
    level = logger.level
    logger.setLevel(logging.WARNING)
    yield
    logger.setLevel(level)


@pytest.fixture
def one_movement_config():
    return IntersectionConfig(intersection_id="I1",
                              speed_limit=35.0,
                              movements=(MovementConfig(movement="left_turn", approach="NB", phase_id="P1",
                                                        stopbar_detectors=("D1",), advance_detectors=("A1",)),))


@pytest.fixture
def two_movement_config():
    return IntersectionConfig(intersection_id="I2",
                              speed_limit=45.0,
                              movements=(MovementConfig("left_turn", "NB", "P1", ("D1",)),
                                         MovementConfig("through", "NB", "P2", ("D2", "D3"), ("A2",), lanes=2)))


def log_text(rows):
    return "timestamp_ms,event,detector_id,phase_id\n" + "\n".join(rows) + "\n"


def parse(rows):
    return parse_event_log(io.StringIO(log_text(rows)))


@pytest.fixture
def small_scenario():
    return ScenarioConfig(intersection_id="T0", days=2, demand_scale=1.0, seed=3)


@pytest.fixture(scope="session")
def small_fleet():
    """Feature tables of a 3-intersection synthetic fleet, 2 days each
    """
    base = ScenarioConfig(intersection_id="F", days=2, seed=11)
    fleet = dict()
    for cfg in make_fleet(base, 3, {"demand_scale": [0.6, 1.4], "cycle_s": [80, 120]}, seed=11):
        result = generate(cfg)
        events = parse_event_log(io.StringIO(result.event_log_text()))
        timeline = build_timeline(events)
        pairing = pair_actuations(events, timeline, result.config)
        fleet[cfg.intersection_id] = extract_features(pairing.actuations, timeline, result.config)
    return fleet


@pytest.fixture
def rng():
    return np.random.default_rng(0)
