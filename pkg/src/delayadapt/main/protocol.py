# Leave-one-intersection-out evaluation, fine-tune selection, ablation and reports
# contributor: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import io
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import ConfigValidationError, InsufficientTargetData, ProtocolError
from delayadapt.util.features import FeatureTable
from delayadapt.util.adapt import DomainSplit
from delayadapt.util.metrics import evaluate, mae, mape, rmse
from .estimator import DelayModel
from .func.create_worker_pool import WorkerPool, derive_seed
from .func.artifacts import dumps_json

POLICIES = ("first_complete_days", "seeded_random")
METRICS = ("mape_pct", "mae", "rmse")
HOURS_PER_DAY = 24

# Fine-tune selection
@log(set_logger=logger)
def select_finetune(table:FeatureTable,
                    movement:str,
                    budget:int,
                    policy:str="first_complete_days",
                    seed:int=0) -> Tuple[FeatureTable, FeatureTable]:
    """Split one intersection's rows of a movement into fine-tune and evaluation rows

    Args:
        table: target intersection rows
        movement: left_turn or through
        budget: fine-tune rows
        policy:
            - first_complete_days: earliest local days holding every hour of every approach,
              truncated to ``budget`` rows in time order
            - seeded_random: ``budget`` rows drawn with ``seed``
    Returns:
        (target_finetune, target_eval)
    """
    if policy not in POLICIES:
        raise ConfigValidationError("policy", f"must be one of {POLICIES}")
    rows = table.for_movement(movement)
    if budget < 0:
        raise ConfigValidationError("budget", "must be non-negative")
    if len(rows) < budget:
        raise InsufficientTargetData(f"{movement}: {len(rows)} target rows for a budget of {budget}")
    if budget == 0:
        return rows.select([]), rows

    if policy == "seeded_random":
        chosen = np.sort(np.random.default_rng(seed).choice(len(rows), size=budget, replace=False)).tolist()
    else:
        approaches = {r.approach for r in rows}
        days:Dict[int, set] = dict()
        for r in rows:
            days.setdefault(r.local_day_start_ms, set()).add((r.approach, r.hour_of_day))
        complete = [d for d in sorted(days) if len(days[d]) == HOURS_PER_DAY * len(approaches)]
        needed = list()
        for d in complete:
            if len(needed) >= budget:
                break
            needed.extend(i for i, r in enumerate(rows) if r.local_day_start_ms == d)
        if len(needed) < budget:
            raise InsufficientTargetData(f"{movement}: {len(complete)} complete days hold fewer than {budget} rows")
        needed.sort(key=lambda i: (rows.rows[i].hour_start_ms, rows.rows[i].approach))
        chosen = sorted(needed[:budget])
    held = set(chosen)
    return rows.select(chosen), rows.select([i for i in range(len(rows)) if i not in held])


def _source_table(fleet:Mapping[str, FeatureTable], target_id:str, movement:str) -> FeatureTable:
    return FeatureTable.concat([fleet[i].for_movement(movement) for i in sorted(fleet) if i != target_id])


def check_feasible(fleet:Mapping[str, FeatureTable], movement:str, budget:int):
    """Raise before any fitting when a fold cannot be built
    """
    if len(fleet) < 2:
        raise ProtocolError(f"leave-one-out needs at least 2 intersections, got {len(fleet)}")
    for intersection_id in sorted(fleet):
        n = len(fleet[intersection_id].for_movement(movement))
        if n < budget:
            raise InsufficientTargetData(f"{intersection_id}: {n} {movement} rows for a budget of {budget}")


# Folds
@dataclass(frozen=True)
class FoldJob:
    fold:int
    target_id:str
    fleet:Dict[str, FeatureTable]
    models:Dict[str, Tuple[str, Dict[str, Any]]]
    movement:str
    budget:int
    policy:str
    seed:int


@dataclass
class LoioResult:
    """Per-fold metrics, failures and pooled predictions of one run
    """
    movement:str
    models:Tuple[str, ...]
    per_fold:List[Dict[str, Any]] = field(default_factory=list)
    failures:List[Dict[str, Any]] = field(default_factory=list)
    predictions:Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)

    @property
    def n_folds(self) -> int:
        return len({r["fold"] for r in self.per_fold} | {f["fold"] for f in self.failures})

    def fold_values(self, model:str, metric:str) -> List[float]:
        return [r[metric] for r in self.per_fold if r["model"] == model]

    def aggregate(self) -> Dict[str, Any]:
        """Mean and median of per-fold metrics, plus metrics on pooled predictions
        """
        out = dict()
        for model in self.models:
            rows = [r for r in self.per_fold if r["model"] == model]
            if not rows:
                out[model] = {"folds_ok": 0}
                continue
            summary:Dict[str, Any] = {"folds_ok": len(rows)}
            for metric in METRICS:
                values = np.array([r[metric] for r in rows])
                summary[metric] = {"mean": float(values.mean()), "median": float(np.median(values))}
            y = np.concatenate([p[0] for p in self.predictions.get(model, [])])
            yhat = np.concatenate([p[1] for p in self.predictions.get(model, [])])
            pooled = {"mae": mae(y, yhat), "rmse": rmse(y, yhat)}
            pooled["mape_pct"] = mape(y, yhat)[0] if np.any(y != 0) else None
            summary["pooled"] = pooled
            out[model] = summary
        return out

    def mean_mape(self, model:str) -> float:
        values = self.fold_values(model, "mape_pct")
        return float(np.mean(values)) if values else math.nan

    def report(self, run_config:Mapping[str, Any]) -> Dict[str, Any]:
        return {"run_config": dict(run_config),
                "per_fold": self.per_fold,
                "aggregate": self.aggregate(),
                "failures": self.failures}


def _run_fold(job:FoldJob) -> Dict[str, Any]:
    finetune, target_eval = select_finetune(job.fleet[job.target_id], job.movement, job.budget, job.policy, job.seed)
    source = _source_table(job.fleet, job.target_id, job.movement)
    split = DomainSplit.from_tables(source, finetune, target_eval)
    records, failures, predictions = list(), list(), dict()
    for label, (kind, options) in job.models.items():
        try:
            model = DelayModel(kind, **dict(options, seed=job.seed)).fit(split)
            yhat = model.predict(split.X_eval)
            metrics = evaluate(split.y_eval, yhat)
        except Exception as e:
            logger.warning(f"fold {job.fold} ({job.target_id}) model {label} failed: {e}")
            failures.append({"fold": job.fold, "target": job.target_id, "model": label,
                             "error": f"{type(e).__name__}: {e}"})
            continue
        record = {"fold": job.fold, "target": job.target_id, "model": label, "movement": job.movement,
                  "n_finetune": split.n_finetune, "n_eval": int(split.X_eval.shape[0])}
        record.update(metrics.to_dict())
        if model.selected is not None:
            record["alpha"] = model.selected.alpha
        records.append(record)
        predictions[label] = (split.y_eval, yhat)
    return {"records": records, "failures": failures, "predictions": predictions}


def model_specs(models:Mapping[str, Any]) -> Dict[str, Tuple[str, Dict[str, Any]]]:
    """label -> (model name, constructor options), from DelayModel objects or names
    """
    specs = dict()
    for label, model in models.items():
        if isinstance(model, DelayModel):
            specs[label] = (model.name, model.options())
        else:
            specs[label] = (str(model), dict())
    return specs


@log(set_logger=logger)
def run_loio(fleet:Mapping[str, FeatureTable],
             models:Mapping[str, Any],
             movement:str,
             budget:int,
             seed:int=0,
             *,
             policy:str="first_complete_days",
             jobs:Optional[int]=None) -> LoioResult:
    """Leave-one-intersection-out: every intersection is the target once

    Args:
        fleet: intersection id -> feature table
        models: label -> DelayModel (options are reused, seed is per fold) or model name
        movement: left_turn or through
        budget: fine-tune rows per target
        seed: master seed; fold i uses derive_seed(seed, i)
        policy: fine-tune selection policy
        jobs: parallel folds
    Returns:
        LoioResult merged in fold order
    """
    check_feasible(fleet, movement, budget)
    specs = model_specs(models)
    fleet = dict(fleet)
    jobs_list = [FoldJob(fold=i, target_id=target_id, fleet=fleet, models=specs, movement=movement,
                         budget=budget, policy=policy, seed=derive_seed(seed, i))
                 for i, target_id in enumerate(sorted(fleet))]
    outcomes = WorkerPool(jobs).map(_run_fold, jobs_list)

    result = LoioResult(movement=movement, models=tuple(specs))
    for outcome in outcomes:
        result.per_fold.extend(outcome["records"])
        result.failures.extend(outcome["failures"])
        for label, pair in outcome["predictions"].items():
            result.predictions.setdefault(label, []).append(pair)
    logger.info(f"loio {movement}: {len(jobs_list)} folds, {len(result.failures)} failed fits")
    return result


@log(set_logger=logger)
def run_ablation(fleet:Mapping[str, FeatureTable],
                 model:Any,
                 movement:str,
                 budgets:Sequence[int],
                 seed:int=0,
                 *,
                 policy:str="first_complete_days",
                 jobs:Optional[int]=None) -> pd.DataFrame:
    """Mean fold MAPE of one model at every fine-tune budget

    Returns:
        frame with columns budget, mean_mape_pct
    """
    budgets = [int(b) for b in budgets]
    if not budgets:
        raise ConfigValidationError("budgets", "must not be empty")
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ConfigValidationError("budgets", "must be strictly increasing")
    check_feasible(fleet, movement, budgets[-1])
    rows = list()
    for budget in budgets:
        result = run_loio(fleet, {"model": model}, movement, budget, seed, policy=policy, jobs=jobs)
        rows.append({"budget": budget, "mean_mape_pct": result.mean_mape("model")})
    return pd.DataFrame(rows, columns=["budget", "mean_mape_pct"])


# Reports
def report_text(result:LoioResult, run_config:Mapping[str, Any]) -> str:
    return dumps_json(result.report(run_config))


def boxplot_frame(result:LoioResult) -> pd.DataFrame:
    rows = [{"model": r["model"], "movement": r["movement"], "fold": r["fold"], "metric": metric, "value": r[metric]}
            for r in result.per_fold for metric in METRICS]
    return pd.DataFrame(rows, columns=["model", "movement", "fold", "metric", "value"])


def csv_text(frame:pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
    return buffer.getvalue()
