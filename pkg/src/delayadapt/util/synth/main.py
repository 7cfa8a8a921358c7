# Synthetic fixed-time intersections with ground-truth stop delay
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import io
import math
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import ConfigValidationError, EmptyRange
from delayadapt.util.ingest import EventRecord, IntersectionConfig, MovementConfig, write_event_log
from delayadapt.util.features import HOUR_MS, hour_floor

DAY_MS = 24 * HOUR_MS
VEHICLE_FT = 18.0
LOOP_FT = 6.0
FT_PER_S_PER_MPH = 5280.0 / 3600.0
# NEMA phase numbering for a four-leg intersection
PHASES = {("through", "NB"): "2", ("through", "SB"): "6", ("through", "EB"): "4", ("through", "WB"): "8",
          ("left_turn", "SB"): "1", ("left_turn", "NB"): "5", ("left_turn", "WB"): "3", ("left_turn", "EB"): "7"}
SHIFTABLE = ("cycle_s", "yellow_s", "saturation_headway_s", "startup_lost_s", "speed_limit",
             "advance_setback_s", "demand_scale")
TRUTH_COLUMNS = ("movement", "approach", "hour_start_ms", "true_delay_s", "vehicle_count")
_INT_FIELDS = ("days", "start_ms", "utc_offset_min", "seed")


def daily_profile(peak:float) -> Tuple[float, ...]:
    """24 hourly rates (veh/h) with morning and evening peaks reaching ``peak``
    """
    shape = (0.10, 0.06, 0.05, 0.05, 0.08, 0.20, 0.55, 0.90, 1.00, 0.70, 0.60, 0.65,
             0.70, 0.65, 0.65, 0.75, 0.90, 1.00, 0.85, 0.60, 0.45, 0.35, 0.25, 0.15)
    return tuple(round(peak * s, 6) for s in shape)


# Types
@dataclass(frozen=True)
class MovementScenario:
    """One signalized movement

    Args:
        movement: left_turn or through
        approach: NB, SB, EB or WB
        green_split: green time as a fraction of the cycle
        offset_frac: green onset within the cycle, as a fraction of the cycle
        demand_profile: 24 hourly arrival rates (veh/h)
        lanes: lanes served; through lanes get one stop-bar and one advance loop each
        shared_lane: lane shared with another movement
    """
    movement:str
    approach:str
    green_split:float
    offset_frac:float
    demand_profile:Tuple[float, ...]
    lanes:int = 1
    shared_lane:bool = False

    @property
    def phase_id(self) -> str:
        return PHASES[(self.movement, self.approach)]

    @property
    def tag(self) -> str:
        return f"{self.approach}-{'L' if self.movement == 'left_turn' else 'T'}"

    def stopbar_detectors(self) -> Tuple[str, ...]:
        if self.movement == "left_turn":
            return (f"{self.tag}-S1",)
        return tuple(f"{self.tag}-S{k + 1}" for k in range(self.lanes))

    def advance_detectors(self) -> Tuple[str, ...]:
        if self.movement == "left_turn":
            return ()
        return tuple(f"{self.tag}-A{k + 1}" for k in range(self.lanes))


def default_movements() -> Tuple[MovementScenario, ...]:
    return (MovementScenario("left_turn", "NB", 0.12, 0.00, daily_profile(120.0)),
            MovementScenario("through", "NB", 0.36, 0.17, daily_profile(500.0), lanes=2),
            MovementScenario("left_turn", "EB", 0.10, 0.58, daily_profile(90.0), shared_lane=True),
            MovementScenario("through", "EB", 0.24, 0.73, daily_profile(380.0), lanes=2))


@dataclass(frozen=True)
class ScenarioConfig:
    intersection_id:str = "SYN"
    days:int = 7
    start_ms:int = 1_704_067_200_000
    utc_offset_min:int = 0
    cycle_s:float = 90.0
    yellow_s:float = 4.0
    saturation_headway_s:float = 2.0
    startup_lost_s:float = 2.0
    speed_limit:float = 35.0
    advance_setback_s:float = 3.0
    demand_scale:float = 1.0
    movements:Tuple[MovementScenario, ...] = field(default_factory=default_movements)
    seed:int = 0

    def __post_init__(self):
        _validate_scenario(self)

    def to_dict(self) -> Dict[str, Any]:
        document = asdict(self)
        document["movements"] = [dict(asdict(m), demand_profile=list(m.demand_profile)) for m in self.movements]
        return document

    def intersection_config(self) -> IntersectionConfig:
        movements = tuple(MovementConfig(movement=m.movement,
                                         approach=m.approach,
                                         phase_id=m.phase_id,
                                         stopbar_detectors=m.stopbar_detectors(),
                                         advance_detectors=m.advance_detectors(),
                                         lanes=m.lanes,
                                         shared_lane=m.shared_lane)
                          for m in self.movements)
        return IntersectionConfig(intersection_id=self.intersection_id,
                                  speed_limit=float(self.speed_limit),
                                  movements=movements,
                                  utc_offset_min=self.utc_offset_min)


def _validate_scenario(cfg:ScenarioConfig):
    for name in _INT_FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise ConfigValidationError(name, f"must be an integer, got {value!r}")
    for name in SHIFTABLE:
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise ConfigValidationError(name, f"must be a number, got {value!r}")
    if not cfg.intersection_id:
        raise ConfigValidationError("intersection_id", "must be non-empty")
    if not isinstance(cfg.days, (int, np.integer)) or cfg.days < 1:
        raise ConfigValidationError("days", "must be a positive integer")
    if hour_floor(cfg.start_ms, cfg.utc_offset_min) != cfg.start_ms:
        raise ConfigValidationError("start_ms", "must fall on a local clock hour")
    for name in ("cycle_s", "saturation_headway_s", "speed_limit"):
        if not getattr(cfg, name) > 0:
            raise ConfigValidationError(name, "must be positive")
    for name in ("yellow_s", "startup_lost_s", "advance_setback_s", "demand_scale"):
        if not getattr(cfg, name) >= 0:
            raise ConfigValidationError(name, "must be non-negative")
    if not cfg.movements:
        raise ConfigValidationError("movements", "at least one movement is required")
    seen = set()
    for i, m in enumerate(cfg.movements):
        path = f"movements[{i}]"
        if (m.movement, m.approach) not in PHASES:
            raise ConfigValidationError(f"{path}", f"unknown movement/approach {m.movement}/{m.approach}")
        if (m.movement, m.approach) in seen:
            raise ConfigValidationError(path, "duplicate movement/approach")
        seen.add((m.movement, m.approach))
        if not 0 < m.green_split:
            raise ConfigValidationError(f"{path}.green_split", "must be positive")
        if not m.green_split * cfg.cycle_s + cfg.yellow_s < cfg.cycle_s:
            raise ConfigValidationError(f"{path}.green_split", "green plus yellow must be shorter than the cycle")
        if not 0 <= m.offset_frac < 1:
            raise ConfigValidationError(f"{path}.offset_frac", "must be in [0, 1)")
        if len(m.demand_profile) != 24:
            raise ConfigValidationError(f"{path}.demand_profile", "needs 24 hourly rates")
        if any(not r >= 0 for r in m.demand_profile):
            raise ConfigValidationError(f"{path}.demand_profile", "rates must be non-negative")
        if not isinstance(m.lanes, (int, np.integer)) or m.lanes < 1:
            raise ConfigValidationError(f"{path}.lanes", "must be a positive integer")


def scenario_from_dict(document:Mapping[str, Any], base:Optional[ScenarioConfig]=None) -> ScenarioConfig:
    """Scenario from a parsed YAML/JSON mapping; missing fields come from ``base``
    """
    base = base or ScenarioConfig()
    names = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(document) - names)
    if unknown:
        raise ConfigValidationError(unknown[0], "unknown scenario field")
    values = {k: v for k, v in document.items() if k != "movements"}
    for name in SHIFTABLE:
        if name in values:
            try:
                values[name] = float(values[name])
            except (TypeError, ValueError):
                raise ConfigValidationError(name, f"must be a number, got {values[name]!r}")
    if "movements" in document:
        movements = list()
        for i, m in enumerate(document["movements"]):
            try:
                movements.append(MovementScenario(movement=m["movement"],
                                                  approach=m["approach"],
                                                  green_split=float(m["green_split"]),
                                                  offset_frac=float(m.get("offset_frac", 0.0)),
                                                  demand_profile=tuple(float(r) for r in m["demand_profile"]),
                                                  lanes=int(m.get("lanes", 1)),
                                                  shared_lane=bool(m.get("shared_lane", False))))
            except KeyError as e:
                raise ConfigValidationError(f"movements[{i}].{e.args[0]}", "is required")
            except (TypeError, ValueError) as e:
                raise ConfigValidationError(f"movements[{i}]", str(e))
        values["movements"] = tuple(movements)
    return replace(base, **values)


class MovementTiming:
    """Fixed-time signal plan of one phase, in integer milliseconds

    Args:
        origin_ms: a green onset
        cycle_ms, green_ms, yellow_ms: plan lengths
    """

    def __init__(self, origin_ms:int, cycle_ms:int, green_ms:int, yellow_ms:int):
        self.origin_ms = int(origin_ms)
        self.cycle_ms = int(cycle_ms)
        self.green_ms = int(green_ms)
        self.yellow_ms = int(yellow_ms)

    @classmethod
    def for_movement(cls, cfg:ScenarioConfig, m:MovementScenario) -> "MovementTiming":
        cycle = int(round(cfg.cycle_s * 1000))
        return cls(origin_ms=cfg.start_ms + int(round(m.offset_frac * cycle)),
                   cycle_ms=cycle,
                   green_ms=int(round(m.green_split * cycle)),
                   yellow_ms=int(round(cfg.yellow_s * 1000)))

    def state_at(self, t:float) -> str:
        pos = (t - self.origin_ms) % self.cycle_ms
        if pos < self.green_ms:
            return "green"
        if pos < self.green_ms + self.yellow_ms:
            return "yellow"
        return "red"

    def next_green(self, t:float) -> int:
        """First green onset strictly after t
        """
        k = math.floor((t - self.origin_ms) / self.cycle_ms) + 1
        return self.origin_ms + k * self.cycle_ms

    def transitions(self, start_ms:int, end_ms:int) -> List[Tuple[int, str]]:
        """(time, state) at ``start_ms``, at every change inside, and at ``end_ms``
        """
        out = [(start_ms, self.state_at(start_ms))]
        k = math.floor((start_ms - self.origin_ms) / self.cycle_ms)
        while True:
            onset = self.origin_ms + k * self.cycle_ms
            if onset >= end_ms:
                break
            for t, state in ((onset, "green"),
                             (onset + self.green_ms, "yellow"),
                             (onset + self.green_ms + self.yellow_ms, "red")):
                if state == "yellow" and self.yellow_ms == 0:
                    continue
                if start_ms < t < end_ms:
                    out.append((t, state))
            k += 1
        out.append((end_ms, self.state_at(end_ms)))
        return out


def queue_departures(arrivals_ms:Sequence[int],
                     timing:MovementTiming,
                     headway_ms:float,
                     lost_ms:float) -> np.ndarray:
    """Point-queue stop-bar departure times, first-in first-out

    A vehicle leaves at its arrival on green or yellow, otherwise at the next green onset plus the
    start-up lost time; it never leaves within ``headway_ms`` of its leader nor during red.
    """
    departures = np.empty(len(arrivals_ms), dtype=float)
    previous = -math.inf
    for i, a in enumerate(arrivals_ms):
        earliest = a if timing.state_at(a) != "red" else timing.next_green(a) + lost_ms
        d = max(earliest, previous + headway_ms)
        while timing.state_at(d) == "red":
            d = timing.next_green(d) + lost_ms
        departures[i] = d
        previous = d
    return departures


def red_arrival_delays(arrivals_ms:Sequence[int], timing:MovementTiming) -> List[Tuple[int, float]]:
    """(green onset, seconds from arrival to onset) for every arrival on red
    """
    out = list()
    for a in arrivals_ms:
        if timing.state_at(a) == "red":
            onset = timing.next_green(a)
            out.append((onset, (onset - a) / 1000.0))
    return out


def nhpp_arrivals(profile:Sequence[float],
                  start_ms:int,
                  end_ms:int,
                  utc_offset_min:int,
                  rng:np.random.Generator) -> np.ndarray:
    """Nonhomogeneous Poisson arrivals by thinning, rates in veh/h by local hour, integer ms
    """
    rates = np.asarray(profile, dtype=float)
    peak = float(rates.max()) if rates.size else 0.0
    if peak <= 0:
        return np.zeros(0, dtype=np.int64)
    n = rng.poisson(peak * (end_ms - start_ms) / HOUR_MS)
    candidates = np.sort(rng.uniform(start_ms, end_ms, size=n))
    local_hour = ((candidates + utc_offset_min * 60_000) // HOUR_MS).astype(np.int64) % 24
    keep = rng.uniform(0.0, peak, size=n) < rates[local_hour]
    times = np.floor(candidates[keep] + 0.5).astype(np.int64)
    return times[(times >= start_ms) & (times < end_ms)]


@dataclass
class GroundTruth:
    """True hourly stop delay and stop-bar vehicle counts per (movement, approach)
    """
    rows:List[Tuple[str, str, int, float, int]] = field(default_factory=list)
    oversaturated:List[Tuple[str, str, int]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(TRUTH_COLUMNS))

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
        return buffer.getvalue()

    def delay(self, movement:str, approach:str, hour_start_ms:int) -> float:
        for m, a, h, d, _ in self.rows:
            if (m, a, h) == (movement, approach, hour_start_ms):
                return d
        raise KeyError((movement, approach, hour_start_ms))


@dataclass
class GeneratedIntersection:
    events:List[EventRecord]
    config:IntersectionConfig
    truth:GroundTruth

    def event_log_text(self) -> str:
        buffer = io.StringIO()
        write_event_log(self.events, buffer)
        return buffer.getvalue()


_KIND_ORDER = {"green_start": 0, "yellow_start": 0, "red_start": 0, "det_on": 1, "det_off": 2}


@log(set_logger=logger)
def generate(cfg:ScenarioConfig) -> GeneratedIntersection:
    """Simulate one intersection

    Args:
        cfg: scenario
    Returns:
        GeneratedIntersection with the event log, its intersection config and ground truth
    """
    t0 = cfg.start_ms
    t_end = t0 + cfg.days * DAY_MS
    offset = cfg.utc_offset_min
    occupancy_ms = (VEHICLE_FT + LOOP_FT) / (cfg.speed_limit * FT_PER_S_PER_MPH) * 1000.0
    setback_ms = int(round(cfg.advance_setback_s * 1000))

    detector_events:List[Tuple[int, str, str]] = list()
    per_movement = list()
    latest = t_end
    for index, m in enumerate(cfg.movements):
        timing = MovementTiming.for_movement(cfg, m)
        rng = np.random.default_rng([int(cfg.seed), index])
        profile = [r * cfg.demand_scale for r in m.demand_profile]
        arrivals = nhpp_arrivals(profile, t0, t_end, offset, rng)
        headway_ms = cfg.saturation_headway_s * 1000.0 / m.lanes
        departures = queue_departures(arrivals, timing, headway_ms, cfg.startup_lost_s * 1000.0)
        delays = red_arrival_delays(arrivals, timing)

        stopbar = m.stopbar_detectors()
        advance = m.advance_detectors()
        for i, (a, d) in enumerate(zip(arrivals.tolist(), departures.tolist())):
            off = int(math.floor(d + occupancy_ms + 0.5))
            detector_events.append((a, "det_on", stopbar[i % len(stopbar)]))
            detector_events.append((off, "det_off", stopbar[i % len(stopbar)]))
            latest = max(latest, off + 1)
            if advance:
                on = a - setback_ms
                if on >= t0:
                    loop = advance[i % len(advance)]
                    detector_events.append((on, "det_on", loop))
                    detector_events.append((int(math.floor(on + occupancy_ms + 0.5)), "det_off", loop))
        if delays:
            latest = max(latest, max(onset for onset, _ in delays) + 1)

        capacity = m.lanes * 3600.0 / cfg.saturation_headway_s * m.green_split
        if max(profile) > capacity:
            logger.warning(f"{cfg.intersection_id} {m.tag}: demand {max(profile):.0f} veh/h exceeds "
                           f"capacity {capacity:.0f} veh/h; queues carry over")
        per_movement.append((m, timing, arrivals, delays, profile, capacity))

    # signal plan must cover every detector event and every red arrival's green onset
    t_sig_end = max(t_end, hour_floor(latest - 1, offset) + HOUR_MS)

    phase_events:List[Tuple[int, str, str]] = list()
    for m, timing, *_ in per_movement:
        for t, state in timing.transitions(t0, t_sig_end):
            phase_events.append((t, f"{state}_start", m.phase_id))

    truth = GroundTruth()
    hours = list(range(hour_floor(t0, offset), t_sig_end, HOUR_MS))
    for m, timing, arrivals, delays, profile, capacity in per_movement:
        counts = dict.fromkeys(hours, 0)
        for a in arrivals.tolist():
            counts[hour_floor(a, offset)] += 1
        binned:Dict[int, List[float]] = {h: [] for h in hours}
        for onset, delay in delays:
            binned[hour_floor(onset - 1, offset)].append(delay)
        for h in hours:
            values = binned[h]
            truth.rows.append((m.movement, m.approach, h,
                               sum(values) / len(values) if values else 0.0, counts[h]))
            local = ((h + offset * 60_000) // HOUR_MS) % 24
            if h < t_end and profile[local] > capacity:
                truth.oversaturated.append((m.movement, m.approach, h))

    records = [EventRecord(t, kind, phase_id=p) for t, kind, p in phase_events]
    records += [EventRecord(t, kind, detector_id=d) for t, kind, d in detector_events]
    records.sort(key=lambda r: (r.timestamp_ms, _KIND_ORDER[r.kind], r.phase_id or r.detector_id))
    logger.info(f"{cfg.intersection_id}: generated {len(records)} events over {cfg.days} days")
    return GeneratedIntersection(events=records, config=cfg.intersection_config(), truth=truth)


@log(set_logger=logger)
def make_fleet(base:ScenarioConfig,
               n:int,
               shift:Mapping[str, Sequence[float]],
               seed:int=0) -> List[ScenarioConfig]:
    """n scenarios with parameters drawn uniformly from ``shift`` ranges

    Args:
        base: scenario supplying every unshifted field
        n: fleet size, at least 2
        shift: field name -> (low, high); fields in SHIFTABLE
        seed: master seed for the draws and for each scenario's own seed
    Returns:
        scenarios with ids ``{base id}-{index:02d}``
    """
    if n < 2:
        raise ConfigValidationError("fleet", "needs at least 2 intersections")
    ranges = dict()
    for name in sorted(shift):
        if name not in SHIFTABLE:
            raise ConfigValidationError(f"shift.{name}", f"not one of {', '.join(SHIFTABLE)}")
        bounds = shift[name]
        if len(bounds) != 2:
            raise ConfigValidationError(f"shift.{name}", "needs [low, high]")
        lo, hi = float(bounds[0]), float(bounds[1])
        if lo > hi:
            raise EmptyRange(f"shift.{name}: low {lo} is above high {hi}")
        ranges[name] = (lo, hi)

    rng = np.random.default_rng(seed)
    fleet = list()
    for i in range(n):
        values = {name: float(rng.uniform(lo, hi)) if hi > lo else lo for name, (lo, hi) in ranges.items()}
        scenario_seed = int(np.random.SeedSequence([int(seed), i]).generate_state(1, dtype=np.uint64)[0])
        fleet.append(replace(base, intersection_id=f"{base.intersection_id}-{i:02d}", seed=scenario_seed, **values))
    return fleet
