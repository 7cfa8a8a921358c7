# Gradient-boosted regression trees with per-sample weights
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple
import numpy as np
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import (AllZeroWeights, ConfigValidationError, DataError, DegenerateDirection,
                                    DimensionMismatch)
from delayadapt.util.features import MANIFEST
from .tree import RegressionTree, grow_tree

MODEL_VERSION = 1
LOSS_KINDS = ("squared", "absolute")
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# Types
@dataclass(frozen=True)
class LossSpec:
    """squared: L = (y-F)^2 / 2, absolute: L = |y-F|
    """
    kind:str = "squared"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigValidationError("loss", f"must be one of {LOSS_KINDS}")

    def value(self, y:np.ndarray, F:np.ndarray) -> np.ndarray:
        u = np.asarray(y, dtype=float) - np.asarray(F, dtype=float)
        return 0.5 * u * u if self.kind == "squared" else np.abs(u)

    def negative_gradient(self, y:np.ndarray, F:np.ndarray) -> np.ndarray:
        u = np.asarray(y, dtype=float) - np.asarray(F, dtype=float)
        return u if self.kind == "squared" else np.sign(u)

    def step_delta(self, r:np.ndarray, h:np.ndarray, a:float, b:float) -> np.ndarray:
        """Per-sample L(r - a*h) - L(r - b*h) for residuals r = y - F, without cancellation
        """
        if self.kind == "squared":
            return 0.5 * (b - a) * h * (2.0 * r - (a + b) * h)
        return np.abs(r - a * h) - np.abs(r - b * h)


@dataclass(frozen=True)
class TrainConfig:
    """Boosting settings; min_leaf_weight counts rows of mean sample weight, not raw weight
    """
    iterations:int = 300
    shrinkage:float = 0.1
    max_depth:int = 3
    min_leaf_weight:float = 5.0
    subsample:float = 1.0
    seed:int = 0

    def __post_init__(self):
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigValidationError("train.iterations", "must be a non-negative integer")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigValidationError("train.shrinkage", "must be in (0, 1]")
        if not isinstance(self.max_depth, (int, np.integer)) or self.max_depth < 0:
            raise ConfigValidationError("train.max_depth", "must be a non-negative integer")
        if not self.min_leaf_weight > 0:
            raise ConfigValidationError("train.min_leaf_weight", "must be positive")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigValidationError("train.subsample", "must be in (0, 1]")

    @classmethod
    def from_dict(cls, document:Dict[str, Any]) -> "TrainConfig":
        known = {k: document[k] for k in ("iterations", "shrinkage", "max_depth",
                                          "min_leaf_weight", "subsample", "seed") if k in document}
        return cls(**known)

    def to_dict(self) -> Dict[str, Any]:
        return {"iterations": int(self.iterations), "shrinkage": float(self.shrinkage),
                "max_depth": int(self.max_depth), "min_leaf_weight": float(self.min_leaf_weight),
                "subsample": float(self.subsample), "seed": int(self.seed)}


@dataclass(frozen=True)
class WeightedSample:
    x:Tuple[float, ...]
    y:float
    w:float = 1.0

    def __post_init__(self):
        if not self.w >= 0:
            raise DataError("sample weight must be non-negative")
        if not (np.all(np.isfinite(self.x)) and math.isfinite(self.y) and math.isfinite(self.w)):
            raise DataError("sample entries must be finite")


def stack_samples(samples:Sequence[WeightedSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X, y, w) arrays from weighted samples
    """
    X = np.array([s.x for s in samples], dtype=float).reshape(len(samples), -1)
    y = np.array([s.y for s in samples], dtype=float)
    w = np.array([s.w for s in samples], dtype=float)
    return X, y, w


class GbmModel:
    """F(x) = f0 + sum_m shrinkage * gamma_m * tree_m(x)

    Args:
        f0: initial constant
        stages: (tree, gamma) per boosting stage
        shrinkage: step multiplier
        loss: training loss
        manifest: feature names, in column order
    """
    kind = "gbm"

    def __init__(self,
                 f0:float,
                 stages:List[Tuple[RegressionTree, float]],
                 shrinkage:float,
                 loss:LossSpec,
                 manifest:Sequence[str]=MANIFEST):
        self.f0 = float(f0)
        self.stages = list(stages)
        self.shrinkage = float(shrinkage)
        self.loss = loss
        self.manifest = tuple(manifest)

    def __repr__(self) -> str:
        return f"GbmModel(stages={len(self.stages)}, loss={self.loss.kind}, f0={self.f0:.4g})"

    def to_dict(self) -> Dict[str, Any]:
        return {"version": MODEL_VERSION,
                "kind": self.kind,
                "loss": self.loss.kind,
                "shrinkage": self.shrinkage,
                "f0": self.f0,
                "manifest": list(self.manifest),
                "stages": [{"gamma": float(g), "max_depth": t.max_depth, "nodes": t.to_nodes()}
                           for t, g in self.stages]}

    @classmethod
    def from_dict(cls, document:Dict[str, Any]) -> "GbmModel":
        if document.get("version") != MODEL_VERSION or document.get("kind", "gbm") != cls.kind:
            raise DataError(f"unsupported model artifact version={document.get('version')} kind={document.get('kind')}")
        stages = [(RegressionTree.from_nodes(s["nodes"], s.get("max_depth", 0)), float(s["gamma"]))
                  for s in document["stages"]]
        return cls(f0=document["f0"],
                   stages=stages,
                   shrinkage=document["shrinkage"],
                   loss=LossSpec(document["loss"]),
                   manifest=document["manifest"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text:str) -> "GbmModel":
        return cls.from_dict(json.loads(text))


# Operations
def _check_weights(y:np.ndarray, w:np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if y.shape != w.shape:
        raise DimensionMismatch(f"{len(y)} labels but {len(w)} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be finite and non-negative")
    return y, w


def fit_constant(y:np.ndarray, w:np.ndarray, loss:LossSpec=LossSpec()) -> float:
    """argmin_c sum_i w_i L(y_i, c): weighted mean (squared) or weighted median (absolute)
    """
    y, w = _check_weights(y, w)
    keep = w > 0
    y, w = y[keep], w[keep]
    if y.size == 0:
        raise AllZeroWeights("every sample has zero weight")
    if loss.kind == "squared":
        return float(np.dot(w, y) / w.sum())
    order = np.argsort(y, kind="stable")
    ys, cw = y[order], np.cumsum(w[order])
    half = cw[-1] / 2.0
    k = int(np.searchsorted(cw, half))
    if cw[k] == half and k + 1 < ys.size:
        return float((ys[k] + ys[k + 1]) / 2.0)
    return float(ys[k])


def pseudo_residuals(y:np.ndarray, F:np.ndarray, loss:LossSpec=LossSpec()) -> np.ndarray:
    """Negative loss gradient at the current model output
    """
    return loss.negative_gradient(y, F)


def golden_section(delta:Callable[[float, float], float],
                   lo:float,
                   hi:float,
                   *,
                   tol:float=1e-13,
                   max_iter:int=300) -> float:
    """Minimize a unimodal function on [lo, hi]

    Args:
        delta: delta(a, b) = f(a) - f(b)
        lo, hi: bracket
        tol: absolute bracket width to stop at
    """
    a, b = float(lo), float(hi)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        c = b - _INV_PHI * (b - a)
        d = a + _INV_PHI * (b - a)
        if delta(c, d) < 0:
            b = d
        else:
            a = c
    return (a + b) / 2.0


def line_search_gamma(y:np.ndarray,
                      F:np.ndarray,
                      h:np.ndarray,
                      w:np.ndarray,
                      loss:LossSpec=LossSpec(),
                      *,
                      method:str="auto") -> float:
    """gamma = argmin_g sum_i w_i L(y_i, F_i + g*h_i)

    Args:
        y: labels
        F: current model output
        h: base learner output
        w: sample weights
        loss: loss
        method: "closed" (squared only), "golden", or "auto" (closed for squared)
    Raises:
        DegenerateDirection: h is zero on every positively weighted sample; boosting treats it as gamma 0
    """
    y, w = _check_weights(y, w)
    r = y - np.asarray(F, dtype=float)
    h = np.asarray(h, dtype=float)
    denom = float(np.dot(w, h * h))
    if denom == 0.0:
        raise DegenerateDirection("base learner output is zero on every weighted sample")
    if method == "auto":
        method = "closed" if loss.kind == "squared" else "golden"
    if method == "closed":
        if loss.kind != "squared":
            raise ConfigValidationError("method", "closed-form line search needs squared loss")
        return float(np.dot(w, r * h) / denom)

    active = (w > 0) & (h != 0)
    bound = float(np.max(np.abs(r[active] / h[active])))
    if bound == 0.0:
        return 0.0
    bound *= 1.0 + 1e-9
    return golden_section(lambda a, b: float(np.dot(w, loss.step_delta(r, h, a, b))),
                          -bound, bound, tol=1e-13 * bound)


def _prepare(X:np.ndarray, y:np.ndarray, w:np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drop zero weights and merge identical (x, y) rows by summing weights
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("feature matrix must be two-dimensional")
    y, w = _check_weights(y, w)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("features and labels must be finite")
    keep = w > 0
    if not keep.any():
        raise AllZeroWeights("every sample has zero weight")
    data = np.column_stack([X[keep], y[keep]])
    unique, inverse = np.unique(data, axis=0, return_inverse=True)
    merged = np.bincount(inverse.reshape(-1), weights=w[keep], minlength=unique.shape[0])
    return unique[:, :-1], unique[:, -1], merged


def leaf_floor(w:np.ndarray, config:TrainConfig) -> float:
    """Smallest admissible leaf weight: min_leaf_weight rows of mean weight

    ``w`` are the merged weights from _prepare, so scaling every weight by c scales the floor by c.
    """
    return config.min_leaf_weight * float(w.sum()) / w.size


@log(set_logger=logger)
def fit_tree(X:np.ndarray,
             r:np.ndarray,
             w:np.ndarray,
             config:TrainConfig=TrainConfig()) -> RegressionTree:
    """CART tree on residual targets; zero-weight rows are excluded
    """
    X, r, w = _prepare(X, r, w)
    return grow_tree(X, r, w, max_depth=config.max_depth, min_leaf_weight=leaf_floor(w, config))


def _stage_rows(n:int, config:TrainConfig, rng:Optional[np.random.Generator]) -> np.ndarray:
    if rng is None:
        return np.arange(n)
    size = max(1, int(round(config.subsample * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


@log(set_logger=logger)
def fit_gbm(X:np.ndarray,
            y:np.ndarray,
            w:Optional[np.ndarray]=None,
            config:TrainConfig=TrainConfig(),
            loss:LossSpec=LossSpec(),
            manifest:Sequence[str]=MANIFEST) -> GbmModel:
    """Weighted gradient boosting with per-stage line search

    Args:
        X: n by q features
        y: labels
        w: non-negative sample weights, default all ones
        config: iterations, shrinkage, tree size, subsampling
        loss: squared or absolute
        manifest: feature names stored with the model
    Returns:
        GbmModel
    """
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    if w is None:
        w = np.ones_like(y_arr)
    X, y_arr, w = _prepare(X, y_arr, w)
    if X.shape[1] != len(manifest):
        raise DimensionMismatch(f"{X.shape[1]} feature columns but manifest has {len(manifest)}")

    f0 = fit_constant(y_arr, w, loss)
    floor = leaf_floor(w, config)
    F = np.full(y_arr.shape, f0)
    rng = np.random.default_rng(config.seed) if config.subsample < 1.0 else None
    stages = list()
    for m in range(config.iterations):
        rows = _stage_rows(y_arr.size, config, rng)
        r = pseudo_residuals(y_arr, F, loss)
        tree = grow_tree(X[rows], r[rows], w[rows], max_depth=config.max_depth, min_leaf_weight=floor)
        h = tree.predict(X)
        try:
            gamma = line_search_gamma(y_arr[rows], F[rows], h[rows], w[rows], loss)
        except DegenerateDirection as e:
            logger.warning(f"stage {m}: degenerate descent direction, gamma=0: {e}")
            gamma = 0.0
        F = F + config.shrinkage * gamma * h
        stages.append((tree, gamma))
    logger.debug(f"fit_gbm: n={y_arr.size} unique rows, M={config.iterations}, "
                 f"train loss={float(np.dot(w, loss.value(y_arr, F)) / w.sum()):.6g}")
    return GbmModel(f0=f0, stages=stages, shrinkage=config.shrinkage, loss=loss, manifest=manifest)


def predict_many(model:GbmModel, X:np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.manifest):
        raise DimensionMismatch(f"expected {len(model.manifest)} feature columns")
    out = np.full(X.shape[0], model.f0)
    for tree, gamma in model.stages:
        out = out + model.shrinkage * gamma * tree.predict(X)
    return out


def staged_predict(model:GbmModel, X:np.ndarray) -> Iterator[np.ndarray]:
    """Model output after each stage, starting with the constant
    """
    X = np.asarray(X, dtype=float)
    out = np.full(X.shape[0], model.f0)
    yield out
    for tree, gamma in model.stages:
        out = out + model.shrinkage * gamma * tree.predict(X)
        yield out


def predict(model:GbmModel, x:Sequence[float]) -> float:
    """Model output for one feature vector
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != len(model.manifest):
        raise DimensionMismatch(f"expected a vector of length {len(model.manifest)}, got shape {x.shape}")
    return float(predict_many(model, x.reshape(1, -1))[0])
