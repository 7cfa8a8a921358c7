# Controller event logs: parsing, signal timelines and detector actuations
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import csv
import json
import bisect
from dataclasses import dataclass, field
from typing import Any, Dict, IO, Iterable, List, Optional, Tuple, Union
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import (ConfigError, ConfigValidationError, MissingHeader, BadEnum,
                                    NonNumericTimestamp, MalformedRow, DuplicateSimultaneousPhaseEvent,
                                    UnknownDetector)

HEADER = ("timestamp_ms", "event", "detector_id", "phase_id")
DETECTOR_EVENTS = ("det_on", "det_off")
PHASE_EVENTS = ("green_start", "yellow_start", "red_start")
EVENT_KINDS = DETECTOR_EVENTS + PHASE_EVENTS
MOVEMENTS = ("left_turn", "through")
APPROACHES = ("NB", "SB", "EB", "WB")
STATES = ("red", "yellow", "green")

_STATE_OF_EVENT = {"green_start": "green", "yellow_start": "yellow", "red_start": "red"}

# Types
@dataclass(frozen=True)
class EventRecord:
    timestamp_ms:int
    kind:str
    detector_id:Optional[str] = None
    phase_id:Optional[str] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.timestamp_ms < 0:
            raise ValueError("timestamp_ms must be non-negative")
        if self.kind in DETECTOR_EVENTS:
            if not self.detector_id or self.phase_id:
                raise ValueError(f"{self.kind} needs a detector_id and no phase_id")
        elif not self.phase_id or self.detector_id:
            raise ValueError(f"{self.kind} needs a phase_id and no detector_id")


@dataclass(frozen=True)
class MovementConfig:
    movement:str
    approach:str
    phase_id:str
    stopbar_detectors:Tuple[str, ...]
    advance_detectors:Tuple[str, ...] = ()
    lanes:int = 1
    shared_lane:bool = False

    @property
    def key(self) -> Tuple[str, str]:
        return (self.movement, self.approach)

    def to_dict(self) -> Dict[str, Any]:
        return {"movement": self.movement,
                "approach": self.approach,
                "phase_id": self.phase_id,
                "stopbar_detectors": list(self.stopbar_detectors),
                "advance_detectors": list(self.advance_detectors),
                "lanes": self.lanes,
                "shared_lane": self.shared_lane}


@dataclass(frozen=True)
class IntersectionConfig:
    intersection_id:str
    speed_limit:float
    movements:Tuple[MovementConfig, ...]
    utc_offset_min:int = 0

    def __post_init__(self):
        _validate_intersection(self)

    def detector_map(self) -> Dict[str, Tuple[MovementConfig, str]]:
        """detector id -> (owning movement, 'stopbar' | 'advance')
        """
        mapping = dict()
        for m in self.movements:
            for d in m.stopbar_detectors:
                mapping[d] = (m, "stopbar")
            for d in m.advance_detectors:
                mapping[d] = (m, "advance")
        return mapping

    def to_dict(self) -> Dict[str, Any]:
        return {"intersection_id": self.intersection_id,
                "speed_limit": self.speed_limit,
                "utc_offset_min": self.utc_offset_min,
                "movements": [m.to_dict() for m in self.movements]}


@dataclass(frozen=True)
class Interval:
    state:str
    start_ms:int
    end_ms:int


@dataclass(frozen=True)
class SignalTimeline:
    """Per-phase contiguous state intervals
    """
    phases:Dict[str, Tuple[Interval, ...]] = field(default_factory=dict)

    def __post_init__(self):
        starts = {p: [iv.start_ms for iv in ivs] for p, ivs in self.phases.items()}
        object.__setattr__(self, "_starts", starts)

    def intervals(self, phase_id:str) -> Tuple[Interval, ...]:
        return self.phases.get(phase_id, ())

    def state_at(self, phase_id:str, ts:int) -> Optional[str]:
        """State of ``phase_id`` at ``ts``; None outside the covered span.
        Intervals are half-open, so a boundary belongs to the interval it starts.
        """
        found = self.interval_at(phase_id, ts)
        return found.state if found else None

    def interval_at(self, phase_id:str, ts:int) -> Optional[Interval]:
        intervals = self.phases.get(phase_id, ())
        if not intervals:
            return None
        pos = bisect.bisect_right(self._starts[phase_id], ts) - 1
        if pos < 0:
            return None
        iv = intervals[pos]
        return iv if iv.start_ms <= ts < iv.end_ms else None


@dataclass(frozen=True)
class Actuation:
    detector_id:str
    on_ms:int
    off_ms:int
    on_state:str
    off_state:str

    def __post_init__(self):
        if self.off_ms <= self.on_ms:
            raise ValueError(f"actuation on {self.detector_id} must have off_ms > on_ms")


@dataclass(frozen=True)
class PairingResult:
    """Actuations plus what was left out of them
    """
    actuations:Tuple[Actuation, ...]
    det_on_total:int
    unmatched_on:int = 0
    orphan_off:int = 0
    malformed:int = 0
    out_of_span:int = 0
    unknown_detectors:Tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.actuations)

    def __len__(self):
        return len(self.actuations)


# Config validation
def _validate_intersection(cfg:IntersectionConfig):
    if not cfg.intersection_id:
        raise ConfigValidationError("intersection_id", "must be non-empty")
    if not cfg.movements:
        raise ConfigValidationError("movements", "at least one movement is required")
    if cfg.speed_limit is None or cfg.speed_limit <= 0:
        raise ConfigValidationError("speed_limit", "must be positive")
    seen_detectors = set()
    seen_keys = set()
    for i, m in enumerate(cfg.movements):
        path = f"movements[{i}]"
        if m.movement not in MOVEMENTS:
            raise ConfigValidationError(f"{path}.movement", f"must be one of {MOVEMENTS}")
        if m.approach not in APPROACHES:
            raise ConfigValidationError(f"{path}.approach", f"must be one of {APPROACHES}")
        if not m.phase_id:
            raise ConfigValidationError(f"{path}.phase_id", "must be non-empty")
        if not m.stopbar_detectors:
            raise ConfigValidationError(f"{path}.stopbar_detectors", "must be non-empty")
        if not isinstance(m.lanes, int) or m.lanes < 1:
            raise ConfigValidationError(f"{path}.lanes", "must be a positive integer")
        if m.key in seen_keys:
            raise ConfigValidationError(path, f"duplicate (movement, approach) {m.key}")
        seen_keys.add(m.key)
        for d in tuple(m.stopbar_detectors) + tuple(m.advance_detectors):
            if d in seen_detectors:
                raise ConfigValidationError(path, f"detector {d} is mapped twice")
            seen_detectors.add(d)


def intersection_from_dict(document:Dict[str, Any]) -> IntersectionConfig:
    """Build an IntersectionConfig from its JSON mapping

    Args:
        document: mapping with IntersectionConfig field names
    """
    if not isinstance(document, dict):
        raise ConfigValidationError("$", "intersection config must be an object")
    for key in ("intersection_id", "speed_limit", "movements"):
        if key not in document:
            raise ConfigValidationError(key, "is required")
    if not isinstance(document["movements"], list):
        raise ConfigValidationError("movements", "must be a list")
    movements = list()
    for i, m in enumerate(document["movements"]):
        path = f"movements[{i}]"
        if not isinstance(m, dict):
            raise ConfigValidationError(path, "must be an object")
        for key in ("movement", "approach", "phase_id", "stopbar_detectors"):
            if key not in m:
                raise ConfigValidationError(f"{path}.{key}", "is required")
        movements.append(MovementConfig(movement=m["movement"],
                                        approach=m["approach"],
                                        phase_id=str(m["phase_id"]),
                                        stopbar_detectors=tuple(str(d) for d in m["stopbar_detectors"]),
                                        advance_detectors=tuple(str(d) for d in m.get("advance_detectors", [])),
                                        lanes=m.get("lanes", 1),
                                        shared_lane=bool(m.get("shared_lane", False))))
    try:
        speed_limit = float(document["speed_limit"])
    except (TypeError, ValueError):
        raise ConfigValidationError("speed_limit", "must be a number")
    return IntersectionConfig(intersection_id=str(document["intersection_id"]),
                              speed_limit=speed_limit,
                              movements=tuple(movements),
                              utc_offset_min=int(document.get("utc_offset_min", 0)))


@log(set_logger=logger)
def load_intersection_config(source:Union[str, Dict[str, Any]]) -> IntersectionConfig:
    """Load intersection config from a JSON file path or an already parsed mapping
    """
    if isinstance(source, dict):
        return intersection_from_dict(source)
    try:
        with open(source, "r", encoding="utf-8") as f:
            document = json.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read intersection config {source}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigValidationError("$", f"invalid JSON in {source}: {e}")
    return intersection_from_dict(document)


def dumps_intersection_config(cfg:IntersectionConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


# Event log
@log(set_logger=logger)
def parse_event_log(stream:IO[str]) -> List[EventRecord]:
    """Parse an event log CSV

    Args:
        stream: text stream with header ``timestamp_ms,event,detector_id,phase_id``
    Returns:
        records in file order
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader("event log is empty", line=1)
    if tuple(h.strip() for h in header) != HEADER:
        raise MissingHeader(f"expected header {','.join(HEADER)}", line=1)

    records = list()
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 4:
            raise MalformedRow(f"expected 4 fields, got {len(row)}", line=line)
        ts_text, kind, detector_id, phase_id = row
        try:
            ts = int(ts_text)
        except ValueError:
            raise NonNumericTimestamp(f"timestamp {ts_text!r} is not an integer", line=line)
        if kind not in EVENT_KINDS:
            raise BadEnum(f"event {kind!r} is not one of {', '.join(EVENT_KINDS)}", line=line)
        try:
            records.append(EventRecord(timestamp_ms=ts,
                                       kind=kind,
                                       detector_id=detector_id or None,
                                       phase_id=phase_id or None))
        except ValueError as e:
            raise MalformedRow(str(e), line=line)
    logger.debug(f"parsed {len(records)} events")
    return records


def write_event_log(records:Iterable[EventRecord], stream:IO[str]):
    """Serialize records in the schema parse_event_log reads
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow([r.timestamp_ms, r.kind, r.detector_id or "", r.phase_id or ""])


def _sorted_events(events:Iterable[EventRecord]) -> List[EventRecord]:
    # stable; at one timestamp det_off goes after det_on
    return sorted(events, key=lambda e: (e.timestamp_ms, 1 if e.kind == "det_off" else 0))


@log(set_logger=logger)
def build_timeline(events:Iterable[EventRecord]) -> SignalTimeline:
    """Close phase events into contiguous per-phase state intervals

    Args:
        events: event records, any order
    Returns:
        SignalTimeline; the span before a phase's first event is not covered
    """
    per_phase:Dict[str, List[EventRecord]] = dict()
    for e in sorted(events, key=lambda e: e.timestamp_ms):
        if e.kind in PHASE_EVENTS:
            per_phase.setdefault(e.phase_id, []).append(e)

    phases = dict()
    for phase_id in sorted(per_phase):
        evs = per_phase[phase_id]
        intervals = list()
        for prev, nxt in zip(evs, evs[1:]):
            if nxt.timestamp_ms == prev.timestamp_ms:
                raise DuplicateSimultaneousPhaseEvent(phase_id, prev.timestamp_ms)
            intervals.append(Interval(_STATE_OF_EVENT[prev.kind], prev.timestamp_ms, nxt.timestamp_ms))
        phases[phase_id] = tuple(intervals)
    return SignalTimeline(phases=phases)


@log(set_logger=logger)
def pair_actuations(events:Iterable[EventRecord],
                    timeline:SignalTimeline,
                    config:IntersectionConfig,
                    *,
                    strict:bool=False) -> PairingResult:
    """Match det_on/det_off pairs and stamp them with their phase states

    Args:
        events: event records, any order
        timeline: timeline built from the same log
        config: intersection config mapping detectors to movements
        strict: raise UnknownDetector instead of skipping unmapped detectors
    Returns:
        PairingResult with actuations in det_on order and drop counters
    """
    detectors = config.detector_map()
    pending:Dict[str, List[int]] = dict()
    matched:List[Tuple[int, str, int]] = list()
    unknown = dict()
    det_on_total = 0
    orphan_off = 0

    for e in _sorted_events(events):
        if e.kind not in DETECTOR_EVENTS:
            continue
        if e.detector_id not in detectors:
            if strict:
                raise UnknownDetector(e.detector_id)
            unknown[e.detector_id] = unknown.get(e.detector_id, 0) + 1
            continue
        queue = pending.setdefault(e.detector_id, [])
        if e.kind == "det_on":
            det_on_total += 1
            queue.append(e.timestamp_ms)
        elif queue:
            # stacked presence calls on one loop clear first-in, first-out
            matched.append((queue.pop(0), e.detector_id, e.timestamp_ms))
        else:
            orphan_off += 1

    for detector_id, count in sorted(unknown.items()):
        logger.warning(f"{config.intersection_id}: detector {detector_id} not in config, {count} events skipped")

    actuations = list()
    malformed = 0
    out_of_span = 0
    for on_ms, detector_id, off_ms in sorted(matched, key=lambda m: (m[0], m[1], m[2])):
        if off_ms <= on_ms:
            malformed += 1
            continue
        phase_id = detectors[detector_id][0].phase_id
        on_state = timeline.state_at(phase_id, on_ms)
        off_state = timeline.state_at(phase_id, off_ms)
        if on_state is None or off_state is None:
            out_of_span += 1
            continue
        actuations.append(Actuation(detector_id, on_ms, off_ms, on_state, off_state))

    unmatched_on = sum(len(q) for q in pending.values())
    if unmatched_on or malformed or out_of_span:
        logger.warning(f"{config.intersection_id}: dropped {unmatched_on} unmatched, "
                       f"{malformed} zero-length, {out_of_span} out-of-span actuations")

    return PairingResult(actuations=tuple(actuations),
                         det_on_total=det_on_total,
                         unmatched_on=unmatched_on,
                         orphan_off=orphan_off,
                         malformed=malformed,
                         out_of_span=out_of_span,
                         unknown_detectors=tuple(sorted(unknown)))
