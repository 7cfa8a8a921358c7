from .estimator import DelayModel, MODEL_NAMES, save_model, load_model
from .protocol import (LoioResult, select_finetune, run_loio, run_ablation, check_feasible, report_text,
                       boxplot_frame, csv_text)

__all__ = ["DelayModel","MODEL_NAMES","save_model","load_model","LoioResult","select_finetune","run_loio",
           "run_ablation","check_feasible","report_text","boxplot_frame","csv_text"]
