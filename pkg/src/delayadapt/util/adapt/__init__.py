from .main import (DomainSplit, GbbwConfig, TradaConfig, TradaEnsemble, GridResult, balanced_weights,
                   fit_gbbw, fit_weighted_gbm, fit_tradaboost_r2, weighted_median, grid_search,
                   loads_model, predict_model)

__all__ = ["DomainSplit","GbbwConfig","TradaConfig","TradaEnsemble","GridResult","balanced_weights",
           "fit_gbbw","fit_weighted_gbm","fit_tradaboost_r2","weighted_median","grid_search",
           "loads_model","predict_model"]
