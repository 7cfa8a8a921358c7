from .main import (EventRecord, MovementConfig, IntersectionConfig, Interval, SignalTimeline,
                   Actuation, PairingResult, parse_event_log, write_event_log, build_timeline,
                   pair_actuations, load_intersection_config, intersection_from_dict,
                   dumps_intersection_config)

__all__ = ["EventRecord","MovementConfig","IntersectionConfig","Interval","SignalTimeline",
           "Actuation","PairingResult","parse_event_log","write_event_log","build_timeline",
           "pair_actuations","load_intersection_config","intersection_from_dict",
           "dumps_intersection_config"]
