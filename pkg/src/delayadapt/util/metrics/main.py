# Error metrics for delay estimates
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
from dataclasses import dataclass, asdict
from typing import Dict, Tuple
import numpy as np
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf.errors import AllLabelsZero, DimensionMismatch, EmptyInput

# Main
@dataclass(frozen=True)
class MetricsReport:
    mape_pct:float
    mae:float
    rmse:float
    n_used:int
    n_dropped_zero_label:int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _pair(y, yhat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise DimensionMismatch(f"{y.size} labels but {yhat.size} estimates")
    if y.size == 0:
        raise EmptyInput("no samples to score")
    return y, yhat


def mape(y, yhat) -> Tuple[float, int, int]:
    """Mean absolute percentage error over nonzero labels

    Returns:
        (percent, n_used, n_dropped)
    """
    y, yhat = _pair(y, yhat)
    keep = y != 0
    n_used = int(keep.sum())
    if n_used == 0:
        raise AllLabelsZero(f"all {y.size} labels are zero")
    value = 100.0 * float(np.mean(np.abs(y[keep] - yhat[keep]) / np.abs(y[keep])))
    return value, n_used, int(y.size - n_used)


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def evaluate(y, yhat) -> MetricsReport:
    value, n_used, n_dropped = mape(y, yhat)
    return MetricsReport(mape_pct=value, mae=mae(y, yhat), rmse=rmse(y, yhat),
                         n_used=n_used, n_dropped_zero_label=n_dropped)
