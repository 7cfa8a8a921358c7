# Hourly feature rows and delay labels from actuations and signal timelines
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import io
import bisect
from dataclasses import dataclass, asdict, fields
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import DataError, EmptyTimeline
from delayadapt.util.ingest import Actuation, IntersectionConfig, SignalTimeline, Interval

HOUR_MS = 3_600_000
MANIFEST_VERSION = 1
MANIFEST:Tuple[str, ...] = ("count_rg", "count_rr", "count_gg", "total_count",
                            "occ_mean_s", "occ_sum_s", "wait_mean_s",
                            "speed_limit", "hour_of_day", "lanes", "shared_lane")
KEY_COLUMNS:Tuple[str, ...] = ("intersection_id", "movement", "approach", "hour_start_ms")
CSV_COLUMNS:Tuple[str, ...] = KEY_COLUMNS + MANIFEST + ("count_other", "label_delay_s")
_INT_COLUMNS = ("hour_start_ms", "hour_of_day", "count_rg", "count_rr", "count_gg",
                "count_other", "total_count", "lanes", "shared_lane")


class Category(str, Enum):
    RG = "RG"
    RR = "RR"
    GG = "GG"
    OTHER = "other"


# Types
@dataclass(frozen=True)
class FeatureRow:
    intersection_id:str
    movement:str
    approach:str
    hour_start_ms:int
    hour_of_day:int
    count_rg:int
    count_rr:int
    count_gg:int
    count_other:int
    total_count:int
    occ_mean_s:float
    occ_sum_s:float
    wait_mean_s:float
    speed_limit:float
    lanes:int
    shared_lane:int
    label_delay_s:float

    @property
    def key(self) -> Tuple[str, str, str, int]:
        return (self.intersection_id, self.movement, self.approach, self.hour_start_ms)

    @property
    def local_day_start_ms(self) -> int:
        return self.hour_start_ms - self.hour_of_day * HOUR_MS


class FeatureTable:
    """Ordered feature rows sharing one column manifest

    Args:
        rows: feature rows; keys must be unique
        manifest: ordered feature names defining the model input columns
    """

    def __init__(self,
                 rows:Iterable[FeatureRow]=(),
                 manifest:Sequence[str]=MANIFEST):
        self.rows:Tuple[FeatureRow, ...] = tuple(rows)
        self.manifest:Tuple[str, ...] = tuple(manifest)
        unknown = [c for c in self.manifest if c not in MANIFEST]
        if unknown:
            raise DataError(f"unknown manifest columns {unknown}")
        keys = set()
        for r in self.rows:
            if r.key in keys:
                raise DataError(f"duplicate feature row key {r.key}")
            keys.add(r.key)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __repr__(self) -> str:
        return f"FeatureTable(rows={len(self.rows)}, q={len(self.manifest)})"

    def X(self) -> np.ndarray:
        """n by q feature matrix in manifest order
        """
        if not self.rows:
            return np.zeros((0, len(self.manifest)), dtype=float)
        return np.array([[getattr(r, c) for c in self.manifest] for r in self.rows], dtype=float)

    def y(self) -> np.ndarray:
        return np.array([r.label_delay_s for r in self.rows], dtype=float)

    def keys(self) -> List[Tuple[str, str, str, int]]:
        return [r.key for r in self.rows]

    def intersections(self) -> List[str]:
        return sorted({r.intersection_id for r in self.rows})

    def select(self, indices:Iterable[int]) -> "FeatureTable":
        return FeatureTable([self.rows[i] for i in indices], self.manifest)

    def for_movement(self, movement:str) -> "FeatureTable":
        return FeatureTable([r for r in self.rows if r.movement == movement], self.manifest)

    def for_intersection(self, intersection_id:str) -> "FeatureTable":
        return FeatureTable([r for r in self.rows if r.intersection_id == intersection_id], self.manifest)

    @classmethod
    def concat(cls, tables:Sequence["FeatureTable"]) -> "FeatureTable":
        if not tables:
            return cls()
        manifest = tables[0].manifest
        for t in tables[1:]:
            if t.manifest != manifest:
                raise DataError("cannot concatenate tables with different manifests")
        return cls([r for t in tables for r in t.rows], manifest)

    def to_frame(self) -> pd.DataFrame:
        if not self.rows:
            return pd.DataFrame(columns=list(CSV_COLUMNS))
        return pd.DataFrame([asdict(r) for r in self.rows], columns=list(CSV_COLUMNS))

    def to_csv_text(self) -> str:
        """CSV text: key columns, manifest columns, count_other, label; reals with 6 decimals
        """
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
        return buffer.getvalue()

    @classmethod
    def from_frame(cls, frame:pd.DataFrame, manifest:Sequence[str]=MANIFEST) -> "FeatureTable":
        missing = [c for c in CSV_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"feature table is missing columns {missing}")
        names = [f.name for f in fields(FeatureRow)]
        rows = list()
        for record in frame.to_dict(orient="records"):
            values = dict()
            for name in names:
                v = record[name]
                if name in ("intersection_id", "movement", "approach"):
                    values[name] = str(v)
                elif name in _INT_COLUMNS:
                    values[name] = int(v)
                else:
                    values[name] = float(v)
            rows.append(FeatureRow(**values))
        return cls(rows, manifest)

    @classmethod
    def read_csv(cls, path:str) -> "FeatureTable":
        try:
            frame = pd.read_csv(path, dtype={"intersection_id": str, "movement": str, "approach": str})
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"cannot read feature table {path}: {e}")
        return cls.from_frame(frame)


# Clock helpers
def hour_floor(ts_ms:int, utc_offset_min:int=0) -> int:
    """Start of the local clock hour containing ts_ms (as epoch ms)
    """
    offset = utc_offset_min * 60_000
    return ((ts_ms + offset) // HOUR_MS) * HOUR_MS - offset


def hour_of_day(hour_start_ms:int, utc_offset_min:int=0) -> int:
    return ((hour_start_ms + utc_offset_min * 60_000) // HOUR_MS) % 24


# Operations
def collapse_state(state:str) -> str:
    """Yellow counts as green for categorization
    """
    return "green" if state == "yellow" else state


def occupancy_time(a:Actuation) -> float:
    return (a.off_ms - a.on_ms) / 1000.0


def categorize(a:Actuation) -> Category:
    on_state = collapse_state(a.on_state)
    off_state = collapse_state(a.off_state)
    if on_state == "red":
        return Category.RG if off_state == "green" else Category.RR
    if off_state == "green":
        return Category.GG
    return Category.OTHER


def _red_arrivals(red:Tuple[int, int], on_times:Sequence[int]) -> Sequence[int]:
    lo = bisect.bisect_left(on_times, red[0])
    hi = bisect.bisect_left(on_times, red[1])
    return on_times[lo:hi]


def waiting_time(red_interval:Tuple[int, int], actuations:Iterable[Actuation]) -> float:
    """Seconds from the first stop-bar arrival during red to green onset

    Args:
        red_interval: (start_ms, end_ms)
        actuations: stop-bar actuations of the movement
    """
    start, end = red_interval
    arrivals = [a.on_ms for a in actuations if start <= a.on_ms < end]
    if not arrivals:
        return 0.0
    return (end - min(arrivals)) / 1000.0


def stop_delay_label(red_intervals:Iterable[Tuple[int, int]], stopbar_actuations:Iterable[Actuation]) -> float:
    """Mean simple stop delay per vehicle stopped by red

    Args:
        red_intervals: (start_ms, end_ms) pairs
        stopbar_actuations: stop-bar actuations of the movement
    """
    on_times = sorted(a.on_ms for a in stopbar_actuations)
    delays = list()
    for start, end in red_intervals:
        delays.extend((end - on) / 1000.0 for on in _red_arrivals((start, end), on_times))
    if not delays:
        return 0.0
    return sum(delays) / len(delays)


def _movement_hours(intervals:Sequence[Interval], utc_offset_min:int) -> List[int]:
    hours = list()
    h = hour_floor(intervals[0].start_ms, utc_offset_min)
    while h < intervals[-1].end_ms:
        hours.append(h)
        h += HOUR_MS
    return hours


@log(set_logger=logger)
def extract_features(actuations:Iterable[Actuation],
                     timeline:SignalTimeline,
                     config:IntersectionConfig,
                     hour_bins:Optional[Iterable[int]]=None) -> FeatureTable:
    """Build one feature row per (movement, approach, local hour)

    Args:
        actuations: paired actuations of one intersection
        timeline: signal timeline of the same intersection
        config: intersection config
        hour_bins: local hour starts (epoch ms) to emit; default every hour the
                   movement's phase timeline overlaps
    Returns:
        FeatureTable ordered by movement, approach and hour
    """
    offset = config.utc_offset_min
    detectors = config.detector_map()
    by_detector:Dict[str, List[Actuation]] = dict()
    for a in actuations:
        if a.detector_id in detectors:
            by_detector.setdefault(a.detector_id, []).append(a)

    rows = list()
    for m in sorted(config.movements, key=lambda m: m.key):
        intervals = timeline.intervals(m.phase_id)
        if not intervals:
            raise EmptyTimeline(f"movement {m.movement}/{m.approach} (phase {m.phase_id}) has no signal intervals")
        hours = sorted(set(hour_bins)) if hour_bins is not None else _movement_hours(intervals, offset)
        wanted = set(hours)

        # detector-level variables, binned by the hour of detector-on
        counts = {h: {c: 0 for c in Category} for h in hours}
        occupancy = {h: [] for h in hours}
        for d in tuple(m.stopbar_detectors) + tuple(m.advance_detectors):
            for a in by_detector.get(d, ()):
                h = hour_floor(a.on_ms, offset)
                if h in wanted:
                    counts[h][categorize(a)] += 1
                    occupancy[h].append(occupancy_time(a))

        # red-interval variables, binned by the hour holding the last instant of red
        stopbar_on = sorted(a.on_ms for d in m.stopbar_detectors for a in by_detector.get(d, ()))
        waits = {h: [] for h in hours}
        delays = {h: [] for h in hours}
        for iv in intervals:
            if iv.state != "red":
                continue
            h = hour_floor(iv.end_ms - 1, offset)
            if h not in wanted:
                continue
            arrivals = _red_arrivals((iv.start_ms, iv.end_ms), stopbar_on)
            waits[h].append((iv.end_ms - arrivals[0]) / 1000.0 if arrivals else 0.0)
            delays[h].extend((iv.end_ms - on) / 1000.0 for on in arrivals)

        for h in hours:
            c = counts[h]
            occ = occupancy[h]
            rows.append(FeatureRow(intersection_id=config.intersection_id,
                                   movement=m.movement,
                                   approach=m.approach,
                                   hour_start_ms=h,
                                   hour_of_day=hour_of_day(h, offset),
                                   count_rg=c[Category.RG],
                                   count_rr=c[Category.RR],
                                   count_gg=c[Category.GG],
                                   count_other=c[Category.OTHER],
                                   total_count=sum(c.values()),
                                   occ_mean_s=sum(occ) / len(occ) if occ else 0.0,
                                   occ_sum_s=sum(occ),
                                   wait_mean_s=sum(waits[h]) / len(waits[h]) if waits[h] else 0.0,
                                   speed_limit=float(config.speed_limit),
                                   lanes=m.lanes,
                                   shared_lane=int(m.shared_lane),
                                   label_delay_s=sum(delays[h]) / len(delays[h]) if delays[h] else 0.0))
    logger.info(f"{config.intersection_id}: extracted {len(rows)} feature rows")
    return FeatureTable(rows)
