# Delay model facade for every estimator the harness compares
# contributor: smlee

# History
# 2025-02-10 | v2.0 - delay estimators replace database connectors
# 2024-12-22 | v1.3 - add SQLite, removed dataclass, and log bug fix
# 2024-03-27 | v1.0 - first commit

# Module import
from typing import Any, Dict, Optional, Sequence, Union
import numpy as np
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import (AllZeroWeights, ConfigValidationError, DataError, NonFiniteKernel,
                                    SingularSystem)
from delayadapt.util.gbm import GbmModel, LossSpec, TrainConfig, fit_gbm
from delayadapt.util.adapt import (DomainSplit, GbbwConfig, GridResult, TradaConfig, TradaEnsemble, fit_gbbw,
                                   fit_tradaboost_r2, fit_weighted_gbm, grid_search, loads_model, predict_model)
from delayadapt.util.density import (KernelSpec, WeightEstimate, iwc_weights, kliep_weights, kmm_weights,
                                     rulsif_weights, ulsif_weights)
from .func.get_settings import get_settings
from .func.artifacts import atomic_write_text

MODEL_NAMES = ("gbm", "gbm_target", "gbbw", "kmm", "kliep", "ulsif", "rulsif", "iwc", "trada")
DENSITY_MODELS = ("kmm", "kliep", "ulsif", "rulsif", "iwc")
_FALLBACK_ERRORS = (AllZeroWeights, SingularSystem, NonFiniteKernel)

# Main
class DelayModel:
    """Delay estimator selected by name

    Args:
        name: one of MODEL_NAMES
            - gbm: source rows only
            - gbm_target: fine-tune rows only
            - gbbw: balanced weighting, alpha fixed or "auto" for a grid search per fit
            - kmm, kliep, ulsif, rulsif, iwc: importance-weighted source rows plus fine-tune rows
            - trada: TrAdaBoostR2
        train: boosting settings (TrainConfig or mapping)
        alpha: target weight for gbbw, or "auto"
        alpha_grid: candidates for alpha="auto"
        normalize_domains: gbbw weights divided by domain sizes, largest per-row weight 1
        cv_folds: folds for alpha="auto"
        rounds: TrAdaBoostR2 rounds
        density: estimator settings (n_centers, bandwidth, lambda, alpha_rel, kmm_B, iwc_reg)
        seed: kernel centers, bandwidth subsample and grid-search folds
        loss: squared or absolute
    """

    def __init__(self,
                 name:str,
                 *,
                 train:Union[TrainConfig, Dict[str, Any], None]=None,
                 alpha:Union[float, str]=0.5,
                 alpha_grid:Sequence[float]=(0.1, 0.3, 0.5, 0.7, 0.9),
                 normalize_domains:bool=False,
                 cv_folds:int=3,
                 rounds:int=10,
                 density:Optional[Dict[str, Any]]=None,
                 seed:int=0,
                 loss:str="squared"):
        if name not in MODEL_NAMES:
            raise ConfigValidationError("models", f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
        if alpha != "auto":
            alpha = float(alpha)
        self.name = name
        self.train = train if isinstance(train, TrainConfig) else TrainConfig.from_dict(train or dict())
        self.alpha = alpha
        self.alpha_grid = tuple(float(a) for a in alpha_grid)
        self.normalize_domains = bool(normalize_domains)
        self.cv_folds = int(cv_folds)
        self.rounds = int(rounds)
        self.density = dict(density or get_settings("density"))
        self.seed = int(seed)
        self.loss = LossSpec(loss)

        self.model:Union[GbmModel, TradaEnsemble, None] = None
        self.weights:Optional[WeightEstimate] = None
        self.selected:Optional[GridResult] = None

    def __repr__(self) -> str:
        return f"DelayModel(name={self.name!r}, alpha={self.alpha!r}, fitted={self.model is not None})"

    @classmethod
    def from_settings(cls,
                      name:str,
                      *,
                      path:str=str(),
                      seed:int=0,
                      **overrides) -> "DelayModel":
        """Build from the train, gbbw, trada and density settings blocks

        Args:
            name: model name
            path: settings file; packaged defaults fill what it leaves out
            seed: estimator seed
            overrides: keyword arguments that win over the settings file
        """
        gbbw = get_settings("gbbw", path=path)
        options = dict(train=get_settings("train", path=path),
                       alpha=gbbw["alpha"],
                       alpha_grid=gbbw["alpha_grid"],
                       normalize_domains=gbbw["normalize_domains"],
                       cv_folds=gbbw["cv_folds"],
                       rounds=get_settings("trada", path=path)["rounds"],
                       density=get_settings("density", path=path),
                       seed=seed)
        options.update({k: v for k, v in overrides.items() if v is not None})
        return cls(name, **options)

    def options(self) -> Dict[str, Any]:
        """Constructor arguments, for rebuilding the model in a worker
        """
        return dict(train=self.train.to_dict(), alpha=self.alpha, alpha_grid=list(self.alpha_grid),
                    normalize_domains=self.normalize_domains, cv_folds=self.cv_folds, rounds=self.rounds,
                    density=dict(self.density), seed=self.seed, loss=self.loss.kind)

    def kernel(self) -> KernelSpec:
        bandwidth = self.density.get("bandwidth", "median")
        if bandwidth != "median":
            bandwidth = float(bandwidth)
        return KernelSpec(bandwidth=bandwidth, n_centers=int(self.density.get("n_centers", 100)), seed=self.seed)

    def _source_weights(self, split:DomainSplit) -> np.ndarray:
        Xs, Xt = split.X_source, split.X_finetune
        try:
            if self.name == "kmm":
                estimate = kmm_weights(Xs, Xt, self.kernel(), B=float(self.density.get("kmm_B", 1000.0)))
            elif self.name == "kliep":
                estimate = kliep_weights(Xs, Xt, self.kernel())
            elif self.name == "ulsif":
                estimate = ulsif_weights(Xs, Xt, self.kernel(), lam=float(self.density.get("lambda", 1e-3)))
            elif self.name == "rulsif":
                estimate = rulsif_weights(Xs, Xt, self.kernel(), lam=float(self.density.get("lambda", 1e-3)),
                                          alpha_rel=float(self.density.get("alpha_rel", 0.1)))
            else:
                estimate = iwc_weights(Xs, Xt, reg=float(self.density.get("iwc_reg", 1e-3)))
        except _FALLBACK_ERRORS as e:
            logger.warning(f"{self.name}: weight estimation failed ({e}); using uniform source weights")
            estimate = WeightEstimate(np.ones(split.n_source), {"fallback": type(e).__name__})
        self.weights = estimate
        return estimate.weights

    @log(set_logger=logger)
    def fit(self, split:DomainSplit) -> "DelayModel":
        """Fit on the source and fine-tune rows of ``split``; evaluation rows are never read
        """
        if self.name == "gbm":
            self.model = fit_gbm(split.X_source, split.y_source, None, self.train, self.loss, split.manifest)
        elif self.name == "gbm_target":
            if split.n_finetune == 0:
                raise DataError("gbm_target needs fine-tune rows")
            self.model = fit_gbm(split.X_finetune, split.y_finetune, None, self.train, self.loss, split.manifest)
        elif self.name == "gbbw":
            alpha, train = self.alpha, self.train
            if alpha == "auto":
                self.selected = grid_search(split, [(a, train) for a in self.alpha_grid],
                                            k=self.cv_folds, seed=self.seed,
                                            normalize_domains=self.normalize_domains, loss=self.loss)
                alpha, train = self.selected.alpha, self.selected.train
            self.model = fit_gbbw(split, GbbwConfig(alpha, train, self.normalize_domains), self.loss)
        elif self.name in DENSITY_MODELS:
            self.model = fit_weighted_gbm(split, self._source_weights(split), self.train, self.loss)
        else:
            self.model = fit_tradaboost_r2(split, TradaConfig(self.rounds, self.train))
        return self

    def predict(self, X:np.ndarray) -> np.ndarray:
        if self.model is None:
            raise RuntimeError(f"{self.name} model is not fitted")
        return predict_model(self.model, X)

    def dumps(self) -> str:
        if self.model is None:
            raise RuntimeError(f"{self.name} model is not fitted")
        return self.model.dumps()


def save_model(model:Union[GbmModel, TradaEnsemble], path:str):
    atomic_write_text(path, model.dumps())


def load_model(path:str) -> Union[GbmModel, TradaEnsemble]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"cannot read model artifact {path}: {e}")
    return loads_model(text)
