# Domain adaptation on top of weighted boosting: balanced weighting, importance weights, TrAdaBoostR2
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import json
import functools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import (AllLabelsZero, ConfigValidationError, DataError, DimensionMismatch,
                                    EmptyDomain, TooFewTargetSamples, WeightLengthMismatch)
from delayadapt.util.features import FeatureTable, MANIFEST
from delayadapt.util.gbm import GbmModel, LossSpec, RegressionTree, TrainConfig, fit_gbm, fit_tree, predict_many
from delayadapt.util.metrics import mape

TRADA_VERSION = 1
PREDICTION_RULE = "weighted_median_last_half"
BETA_FLOOR = 1e-10

# Types
class DomainSplit:
    """Source rows, labelled target fine-tune rows and held-out target rows

    Args:
        X_source, y_source: source features and labels (n1 rows)
        X_finetune, y_finetune: target fine-tune features and labels (n2 rows)
        X_eval, y_eval: target evaluation features and labels
        manifest: feature names shared by every block
    """

    def __init__(self,
                 X_source:np.ndarray,
                 y_source:np.ndarray,
                 X_finetune:np.ndarray,
                 y_finetune:np.ndarray,
                 X_eval:Optional[np.ndarray]=None,
                 y_eval:Optional[np.ndarray]=None,
                 manifest:Sequence[str]=MANIFEST):
        self.manifest = tuple(manifest)
        q = len(self.manifest)
        self.X_source, self.y_source = self._block(X_source, y_source, q, "source")
        self.X_finetune, self.y_finetune = self._block(X_finetune, y_finetune, q, "target_finetune")
        if X_eval is None:
            X_eval, y_eval = np.zeros((0, q)), np.zeros(0)
        self.X_eval, self.y_eval = self._block(X_eval, y_eval, q, "target_eval")

    @staticmethod
    def _block(X, y, q, name) -> Tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float).reshape(-1, q) if np.size(X) else np.zeros((0, q))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{name}: {X.shape[0]} feature rows but {y.shape[0]} labels")
        return X, y

    @classmethod
    def from_tables(cls,
                    source:FeatureTable,
                    target_finetune:FeatureTable,
                    target_eval:Optional[FeatureTable]=None) -> "DomainSplit":
        """Build from feature tables; the three tables must share a manifest and no row key
        """
        tables = [source, target_finetune] + ([target_eval] if target_eval is not None else [])
        manifest = source.manifest
        seen = set()
        for t in tables:
            if t.manifest != manifest:
                raise DataError("domain split tables have different manifests")
            keys = set(t.keys())
            if seen & keys:
                raise DataError(f"domain split tables overlap on {len(seen & keys)} row keys")
            seen |= keys
        if target_eval is None:
            return cls(source.X(), source.y(), target_finetune.X(), target_finetune.y(), manifest=manifest)
        return cls(source.X(), source.y(), target_finetune.X(), target_finetune.y(),
                   target_eval.X(), target_eval.y(), manifest=manifest)

    @property
    def n_source(self) -> int:
        return self.X_source.shape[0]

    @property
    def n_finetune(self) -> int:
        return self.X_finetune.shape[0]

    def __repr__(self) -> str:
        return f"DomainSplit(n_source={self.n_source}, n_finetune={self.n_finetune}, n_eval={self.X_eval.shape[0]})"

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        """Source rows followed by fine-tune rows
        """
        return np.vstack([self.X_source, self.X_finetune]), np.concatenate([self.y_source, self.y_finetune])

    def with_finetune(self, rows:np.ndarray) -> "DomainSplit":
        return DomainSplit(self.X_source, self.y_source, self.X_finetune[rows], self.y_finetune[rows],
                           manifest=self.manifest)


@dataclass(frozen=True)
class GbbwConfig:
    alpha:float = 0.5
    train:TrainConfig = field(default_factory=TrainConfig)
    normalize_domains:bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigValidationError("gbbw.alpha", f"must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class TradaConfig:
    rounds:int = 10
    train:TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not isinstance(self.rounds, (int, np.integer)) or self.rounds < 1:
            raise ConfigValidationError("trada.rounds", "must be a positive integer")


# Balanced weighting
def balanced_weights(n_source:int, n_finetune:int, alpha:float, normalize_domains:bool=False) -> np.ndarray:
    """(1-alpha) per source row and alpha per target row

    Normalized, the domains weigh (1-alpha)/n1 and alpha/n2 per row, divided by the larger of the two,
    so the only non-empty domain at alpha 0 or 1 gets weight exactly 1.
    """
    if normalize_domains:
        ws = (1.0 - alpha) / n_source
        wt = alpha / n_finetune
        top = max(ws, wt)
        ws, wt = ws / top, wt / top
    else:
        ws, wt = 1.0 - alpha, alpha
    return np.concatenate([np.full(n_source, ws), np.full(n_finetune, wt)])


@log(set_logger=logger)
def fit_gbbw(split:DomainSplit,
             config:GbbwConfig=GbbwConfig(),
             loss:LossSpec=LossSpec()) -> GbmModel:
    """Gradient boosting where every source row weighs (1-alpha) and every fine-tune row weighs alpha

    Initial constant, pseudo-residual trees and line searches all run on the combined weighted set.
    """
    if split.n_source == 0 or split.n_finetune == 0:
        raise EmptyDomain(f"balanced weighting needs both domains, got n1={split.n_source} n2={split.n_finetune}")
    X, y = split.stacked()
    w = balanced_weights(split.n_source, split.n_finetune, config.alpha, config.normalize_domains)
    return fit_gbm(X, y, w, config.train, loss, manifest=split.manifest)


@log(set_logger=logger)
def fit_weighted_gbm(split:DomainSplit,
                     source_weights:np.ndarray,
                     config:TrainConfig=TrainConfig(),
                     loss:LossSpec=LossSpec()) -> GbmModel:
    """Boosting on importance-weighted source rows plus unit-weight fine-tune rows
    """
    source_weights = np.asarray(source_weights, dtype=float).reshape(-1)
    if source_weights.size != split.n_source:
        raise WeightLengthMismatch(f"{source_weights.size} weights for {split.n_source} source rows")
    X, y = split.stacked()
    w = np.concatenate([source_weights, np.ones(split.n_finetune)])
    return fit_gbm(X, y, w, config, loss, manifest=split.manifest)


# TrAdaBoostR2
class TradaEnsemble:
    """Boosted trees combined by a weighted median over the last half of the rounds

    Args:
        rounds: (beta_t, tree) per kept round
        manifest: feature names
        source_weight_history: total source weight after each round
    """
    kind = "trada"

    def __init__(self,
                 rounds:List[Tuple[float, RegressionTree]],
                 manifest:Sequence[str]=MANIFEST,
                 source_weight_history:Sequence[float]=()):
        self.rounds = list(rounds)
        self.manifest = tuple(manifest)
        self.source_weight_history = list(source_weight_history)

    def __repr__(self) -> str:
        return f"TradaEnsemble(rounds={len(self.rounds)})"

    def predict_many(self, X:np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.manifest):
            raise DimensionMismatch(f"expected {len(self.manifest)} feature columns")
        kept = self.rounds[len(self.rounds) // 2:]
        predictions = np.column_stack([tree.predict(X) for _, tree in kept])
        weights = np.array([max(math.log(1.0 / beta), 0.0) for beta, _ in kept])
        if weights.sum() <= 0:
            weights = np.ones_like(weights)
        return weighted_median(predictions, weights)

    def to_dict(self) -> Dict[str, Any]:
        return {"version": TRADA_VERSION,
                "kind": self.kind,
                "manifest": list(self.manifest),
                "prediction_rule": PREDICTION_RULE,
                "rounds": [{"beta_t": float(beta), "tree": {"max_depth": tree.max_depth, "nodes": tree.to_nodes()}}
                           for beta, tree in self.rounds]}

    @classmethod
    def from_dict(cls, document:Dict[str, Any]) -> "TradaEnsemble":
        if document.get("version") != TRADA_VERSION or document.get("prediction_rule") != PREDICTION_RULE:
            raise DataError(f"unsupported ensemble artifact version={document.get('version')}")
        rounds = [(float(r["beta_t"]), RegressionTree.from_nodes(r["tree"]["nodes"], r["tree"].get("max_depth", 0)))
                  for r in document["rounds"]]
        return cls(rounds, document["manifest"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def weighted_median(predictions:np.ndarray, weights:np.ndarray) -> np.ndarray:
    """Per row, the first sorted prediction whose cumulative weight reaches half the total

    Args:
        predictions: n by k learner outputs
        weights: k learner weights
    """
    order = np.argsort(predictions, axis=1, kind="stable")
    cdf = np.cumsum(weights[order], axis=1)
    pick = np.argmax(cdf >= 0.5 * cdf[:, -1:], axis=1)
    rows = np.arange(predictions.shape[0])
    return predictions[rows, order[rows, pick]]


@log(set_logger=logger)
def fit_tradaboost_r2(split:DomainSplit, config:TradaConfig=TradaConfig()) -> TradaEnsemble:
    """Transfer boosting for regression: source weights decay with their error, target weights grow

    Args:
        split: source and fine-tune rows; needs n1 >= 1 and n2 >= 2
        config: rounds and base-tree settings
    Returns:
        TradaEnsemble
    """
    n1, n2 = split.n_source, split.n_finetune
    if n1 < 1 or n2 < 2:
        raise EmptyDomain(f"TrAdaBoostR2 needs n1 >= 1 and n2 >= 2, got n1={n1} n2={n2}")
    X, y = split.stacked()
    N = n1 + n2
    T = config.rounds
    w = np.full(N, 1.0 / N)
    beta_src = 1.0 / (1.0 + math.sqrt(2.0 * math.log(n1) / T)) if n1 > 1 else 1.0

    rounds = list()
    history = list()
    for t in range(T):
        tree = fit_tree(X, y, w * N, config.train)
        error = np.abs(y - tree.predict(X))
        largest = error.max()
        e = error / largest if largest > 0 else np.zeros_like(error)
        wt = w[n1:]
        eps = float(np.dot(wt, e[n1:]) / wt.sum())
        if eps == 0.0:
            rounds.append((BETA_FLOOR, tree))
            history.append(float(w[:n1].sum()))
            logger.debug(f"trada: round {t} fits the target exactly, stopping")
            break
        if eps >= 0.5:
            if not rounds:
                rounds.append((eps / (1.0 - eps) if eps < 1.0 else 1.0, tree))
                history.append(float(w[:n1].sum()))
            logger.info(f"trada: round {t} target error {eps:.3f} >= 0.5, stopping with {len(rounds)} rounds")
            break
        beta_t = eps / (1.0 - eps)
        w = np.concatenate([w[:n1] * np.power(beta_src, e[:n1]), wt * np.power(beta_t, -e[n1:])])
        w = w / w.sum()
        rounds.append((beta_t, tree))
        history.append(float(w[:n1].sum()))
    return TradaEnsemble(rounds, split.manifest, history)


# Artifacts
def loads_model(text:str) -> Union[GbmModel, TradaEnsemble]:
    """Parse a model artifact of either kind
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"model artifact is not valid JSON: {e}")
    if document.get("kind", "gbm") == TradaEnsemble.kind:
        return TradaEnsemble.from_dict(document)
    return GbmModel.from_dict(document)


def predict_model(model:Union[GbmModel, TradaEnsemble], X:np.ndarray) -> np.ndarray:
    if isinstance(model, TradaEnsemble):
        return model.predict_many(X)
    return predict_many(model, X)


# Grid search
@dataclass(frozen=True)
class GridResult:
    index:int
    alpha:float
    train:TrainConfig
    score:float
    scores:Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "alpha": self.alpha, "train": self.train.to_dict(),
                "cv_mape_pct": self.score, "scores": list(self.scores)}


def _cv_score(split:DomainSplit,
              alpha:float,
              train:TrainConfig,
              folds:List[np.ndarray],
              normalize_domains:bool,
              loss:LossSpec) -> float:
    scores = list()
    n2 = split.n_finetune
    for held in folds:
        rest = np.setdiff1d(np.arange(n2), held)
        model = fit_gbbw(split.with_finetune(rest), GbbwConfig(alpha, train, normalize_domains), loss)
        try:
            scores.append(mape(split.y_finetune[held], predict_many(model, split.X_finetune[held]))[0])
        except AllLabelsZero:
            continue
    return float(np.mean(scores)) if scores else math.inf


def _cv_point(split, folds, normalize_domains, loss, point:Tuple[float, TrainConfig]) -> float:
    return _cv_score(split, point[0], point[1], folds, normalize_domains, loss)


@log(set_logger=logger)
def grid_search(split:DomainSplit,
                grid:Sequence[Tuple[float, TrainConfig]],
                *,
                k:int=3,
                seed:int=0,
                normalize_domains:bool=False,
                loss:LossSpec=LossSpec(),
                jobs:int=1) -> GridResult:
    """k-fold cross-validation over the fine-tune rows for every (alpha, TrainConfig) point

    Ties go to the earliest of (score, iterations, depth, |alpha - 0.5|, grid position).

    Args:
        split: source rows and fine-tune rows; evaluation rows are not touched
        grid: candidate points
        k: folds
        seed: fold assignment
        normalize_domains: gbbw weights scaled by domain sizes
        jobs: parallel grid points, run through WorkerPool
    Returns:
        GridResult of the selected point
    """
    if not grid:
        raise ConfigValidationError("grid", "must contain at least one point")
    n2 = split.n_finetune
    if n2 < 2 * k:
        raise TooFewTargetSamples(f"{k}-fold search needs at least {2 * k} fine-tune rows, got {n2}")
    permutation = np.random.default_rng(seed).permutation(n2)
    folds = [np.sort(f) for f in np.array_split(permutation, k)]
    # package import cycle
    from delayadapt.main.func.create_worker_pool import WorkerPool
    scores = WorkerPool(jobs).map(functools.partial(_cv_point, split, folds, normalize_domains, loss), grid)
    best = min(range(len(grid)),
               key=lambda i: (scores[i], grid[i][1].iterations, grid[i][1].max_depth, abs(grid[i][0] - 0.5), i))
    logger.info(f"grid search: selected point {best} alpha={grid[best][0]} cv mape={scores[best]:.4f}%")
    return GridResult(index=best, alpha=float(grid[best][0]), train=grid[best][1],
                      score=float(scores[best]), scores=tuple(float(s) for s in scores))
