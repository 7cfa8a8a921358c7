from .main import (ScenarioConfig, MovementScenario, MovementTiming, GroundTruth, GeneratedIntersection,
                   PHASES, SHIFTABLE, TRUTH_COLUMNS, daily_profile, default_movements, scenario_from_dict,
                   queue_departures, red_arrival_delays, nhpp_arrivals, generate, make_fleet)

__all__ = ["ScenarioConfig","MovementScenario","MovementTiming","GroundTruth","GeneratedIntersection",
           "PHASES","SHIFTABLE","TRUTH_COLUMNS","daily_profile","default_movements","scenario_from_dict",
           "queue_departures","red_arrival_delays","nhpp_arrivals","generate","make_fleet"]
