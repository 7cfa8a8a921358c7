from .tree import RegressionTree, grow_tree
from .main import (LossSpec, TrainConfig, WeightedSample, GbmModel, stack_samples, fit_constant,
                   pseudo_residuals, leaf_floor, fit_tree, line_search_gamma, golden_section, fit_gbm, predict,
                   predict_many, staged_predict)

__all__ = ["RegressionTree","grow_tree","LossSpec","TrainConfig","WeightedSample","GbmModel",
           "stack_samples","fit_constant","pseudo_residuals","leaf_floor","fit_tree","line_search_gamma",
           "golden_section","fit_gbm","predict","predict_many","staged_predict"]
