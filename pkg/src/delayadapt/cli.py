# Command line entry point
# contributor: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
import os
import sys
import glob
import argparse
import itertools
from typing import Any, Dict, List, Optional, Sequence
import logging
from delayadapt import __version__
from delayadapt.conf import Logger
from delayadapt.conf.errors import ConfigValidationError, DataError, DelayAdaptError
from delayadapt.util.ingest import (build_timeline, dumps_intersection_config, load_intersection_config,
                                    pair_actuations, parse_event_log)
from delayadapt.util.features import FeatureTable, extract_features
from delayadapt.util.gbm import TrainConfig
from delayadapt.util.adapt import DomainSplit, grid_search, predict_model
from delayadapt.util.density import write_weights_csv
from delayadapt.util.metrics import evaluate
from delayadapt.util.synth import generate, make_fleet, scenario_from_dict
from delayadapt.main.estimator import DENSITY_MODELS, DelayModel, MODEL_NAMES, load_model, save_model
from delayadapt.main.protocol import (POLICIES, boxplot_frame, check_feasible, csv_text, report_text,
                                      run_ablation, run_loio, select_finetune)
from delayadapt.main.func.get_settings import get_settings, load_file
from delayadapt.main.func.create_worker_pool import WorkerPool, resolve_jobs
from delayadapt.main.func.artifacts import RunManifest, atomic_write_json, atomic_write_text

logger = logging.getLogger('delayadapt')
MOVEMENT_CHOICES = ("left_turn", "through")

# Helpers
def _read_fleet(path:str) -> Dict[str, FeatureTable]:
    """Feature CSVs under a directory (or one file), grouped by intersection
    """
    files = sorted(glob.glob(os.path.join(path, "*.csv"))) if os.path.isdir(path) else [path]
    if not files:
        raise DataError(f"no feature CSV files in {path}")
    table = FeatureTable.concat([FeatureTable.read_csv(f) for f in files])
    return {i: table.for_intersection(i) for i in table.intersections()}


def _input_files(path:str) -> List[str]:
    if os.path.isdir(path):
        return sorted(glob.glob(os.path.join(path, "*.csv")))
    return [path]


def _budget(args) -> int:
    if args.budget is not None:
        return args.budget
    return int(get_settings("budgets", path=args.settings)[args.movement])


def _alpha(text:Optional[str]):
    if text is None or text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise ConfigValidationError("--alpha", f"must be a number or 'auto', got {text!r}")


def _model(name:str, args) -> DelayModel:
    return DelayModel.from_settings(name, path=args.settings, seed=args.seed, alpha=_alpha(args.alpha))


def _int_list(text:str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigValidationError("--budgets", f"must be comma separated integers, got {text!r}")


def _finish(command:str, args, output:str, inputs:Sequence[str]=()):
    RunManifest(command, vars(args), seed=getattr(args, "seed", None), inputs=inputs).write_for(output)
    logger.info(f"{command}: wrote {output}")


def _generated_files(cfg_dict:Dict[str, Any]) -> Dict[str, str]:
    cfg = scenario_from_dict(cfg_dict)
    result = generate(cfg)
    return {"events.csv": result.event_log_text(),
            "intersection.json": dumps_intersection_config(result.config),
            "ground_truth.csv": result.truth.to_csv_text()}


# Commands
def cmd_generate(args) -> int:
    document = load_file(args.scenario) if args.scenario else dict()
    if not isinstance(document, dict):
        raise ConfigValidationError("scenario", "must be a mapping")
    if args.seed is not None:
        document["seed"] = args.seed
    base = scenario_from_dict(document)
    inputs = [args.scenario] if args.scenario else []
    if args.fleet:
        shift = load_file(args.shift) if args.shift else dict()
        if not isinstance(shift, dict):
            raise ConfigValidationError("shift", "must map field names to [low, high]")
        inputs += [args.shift] if args.shift else []
        fleet = make_fleet(base, args.fleet, shift, seed=base.seed)
        targets = [(os.path.join(args.out, cfg.intersection_id), cfg.to_dict()) for cfg in fleet]
    else:
        targets = [(args.out, base.to_dict())]
    outputs = WorkerPool(args.jobs).map(_generated_files, [doc for _, doc in targets])
    for (directory, _), files in zip(targets, outputs):
        for name, text in files.items():
            atomic_write_text(os.path.join(directory, name), text)
    os.makedirs(args.out, exist_ok=True)
    _finish("generate", args, args.out, inputs)
    return 0


def cmd_extract(args) -> int:
    config = load_intersection_config(args.config)
    try:
        with open(args.events, "r", encoding="utf-8", newline="") as f:
            events = parse_event_log(f)
    except OSError as e:
        raise DataError(f"cannot read event log {args.events}: {e}")
    timeline = build_timeline(events)
    pairing = pair_actuations(events, timeline, config, strict=args.strict)
    table = extract_features(pairing.actuations, timeline, config)
    atomic_write_text(args.out, table.to_csv_text())
    _finish("extract", args, args.out, [args.events, args.config])
    return 0


def cmd_train(args) -> int:
    if args.weights_out and args.model not in DENSITY_MODELS:
        raise ConfigValidationError("--weights-out", f"model {args.model!r} does not estimate source weights")
    source = _read_fleet(args.features)
    if args.target_features:
        target = FeatureTable.concat(list(_read_fleet(args.target_features).values()))
        finetune, _ = select_finetune(target, args.movement, _budget(args), args.policy, args.seed)
    else:
        finetune = FeatureTable()
    rows = FeatureTable.concat([t.for_movement(args.movement) for _, t in sorted(source.items())])
    split = DomainSplit.from_tables(rows, finetune)
    model = _model(args.model, args).fit(split)
    if args.weights_out:
        write_weights_csv(model.weights.weights, args.weights_out)
    save_model(model.model, args.out)
    inputs = _input_files(args.features) + (_input_files(args.target_features) if args.target_features else [])
    _finish("train", args, args.out, inputs)
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    table = FeatureTable.concat(list(_read_fleet(args.features).values())).for_movement(args.movement)
    report = evaluate(table.y(), predict_model(model, table.X()))
    atomic_write_json(args.out, report.to_dict())
    _finish("evaluate", args, args.out, [args.model] + _input_files(args.features))
    return 0


def cmd_loio(args) -> int:
    fleet = _read_fleet(args.features)
    budget = _budget(args)
    check_feasible(fleet, args.movement, budget)
    names = [n.strip() for n in args.models.split(",") if n.strip()]
    models = {name: _model(name, args) for name in names}
    result = run_loio(fleet, models, args.movement, budget, args.seed, policy=args.policy, jobs=args.jobs)
    run_config = {"movement": args.movement, "budget": budget, "models": names, "seed": args.seed,
                  "policy": args.policy, "alpha": args.alpha, "version": __version__}
    atomic_write_text(args.out, report_text(result, run_config))
    if args.boxplot:
        atomic_write_text(args.boxplot, csv_text(boxplot_frame(result)))
    _finish("loio", args, args.out, _input_files(args.features))
    return 0 if result.per_fold else 1


def cmd_ablate(args) -> int:
    fleet = _read_fleet(args.features)
    budgets = _int_list(args.budgets) if args.budgets else list(get_settings("ablation_budgets", path=args.settings))
    curve = run_ablation(fleet, _model(args.model, args), args.movement, budgets, args.seed,
                         policy=args.policy, jobs=args.jobs)
    atomic_write_text(args.out, csv_text(curve))
    _finish("ablate", args, args.out, _input_files(args.features))
    return 0


def _grid_points(document:Any, train:Dict[str, Any]) -> List[Any]:
    """Grid file: a list of points, or a mapping of field -> candidate list expanded as a product
    """
    if isinstance(document, dict):
        names = sorted(document)
        values = [document[n] if isinstance(document[n], list) else [document[n]] for n in names]
        document = [dict(zip(names, combo)) for combo in itertools.product(*values)]
    if not isinstance(document, list) or not document:
        raise ConfigValidationError("grid", "must be a non-empty list of points or a mapping of lists")
    points = list()
    for i, point in enumerate(document):
        if not isinstance(point, dict) or "alpha" not in point:
            raise ConfigValidationError(f"grid[{i}].alpha", "is required")
        merged = dict(train)
        merged.update({k: v for k, v in point.items() if k != "alpha"})
        points.append((float(point["alpha"]), TrainConfig.from_dict(merged)))
    return points


def cmd_gridsearch(args) -> int:
    fleet = _read_fleet(args.features)
    if args.target not in fleet:
        raise ConfigValidationError("--target", f"unknown intersection {args.target!r}")
    budget = _budget(args)
    finetune, _ = select_finetune(fleet[args.target], args.movement, budget, args.policy, args.seed)
    source = FeatureTable.concat([t.for_movement(args.movement) for i, t in sorted(fleet.items()) if i != args.target])
    split = DomainSplit.from_tables(source, finetune)
    train = get_settings("train", path=args.settings)
    gbbw = get_settings("gbbw", path=args.settings)
    if args.grid:
        grid = _grid_points(load_file(args.grid), train)
    else:
        grid = [(a, TrainConfig.from_dict(train)) for a in gbbw["alpha_grid"]]
    result = grid_search(split, grid, k=int(gbbw["cv_folds"]), seed=args.seed,
                         normalize_domains=bool(gbbw.get("normalize_domains", False)), jobs=resolve_jobs(args.jobs))
    atomic_write_json(args.out, result.to_dict())
    _finish("gridsearch", args, args.out, _input_files(args.features) + ([args.grid] if args.grid else []))
    return 0


# Parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delay-adapt",
                                     description="Vehicle delay estimation at signalized intersections under domain shift",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    common.add_argument("--jobs", type=int, default=None, help="workers; falls back to DELAY_ADAPT_JOBS, then cpu count")
    common.add_argument("--settings", default=str(), help="YAML/JSON settings file overriding packaged defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("generate", parents=[common], formatter_class=fmt, help="synthetic event logs")
    p.add_argument("--scenario", default=None, help="scenario YAML/JSON; defaults fill missing fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    p.add_argument("--fleet", type=int, default=0, help="number of intersections; 0 writes one scenario")
    p.add_argument("--shift", default=None, help="YAML/JSON mapping field -> [low, high] for the fleet")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", parents=[common], formatter_class=fmt, help="hourly features from an event log")
    p.add_argument("--events", required=True, help="event log CSV")
    p.add_argument("--config", required=True, help="intersection config JSON")
    p.add_argument("--out", required=True, help="feature CSV")
    p.add_argument("--strict", action="store_true", help="fail on detectors missing from the config")
    p.set_defaults(func=cmd_extract)

    def protocol_flags(p, budget=True):
        p.add_argument("--features", required=True, help="feature CSV or directory of feature CSVs")
        p.add_argument("--movement", required=True, choices=MOVEMENT_CHOICES)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--alpha", default=None, help="gbbw target weight or 'auto'; default from settings")
        p.add_argument("--policy", default="first_complete_days", choices=POLICIES)
        if budget:
            p.add_argument("--budget", type=int, default=None, help="fine-tune rows; default per movement from settings")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="fit one model")
    protocol_flags(p)
    p.add_argument("--model", default="gbbw", choices=MODEL_NAMES)
    p.add_argument("--target-features", default=None, help="target intersection features for the fine-tune rows")
    p.add_argument("--out", required=True, help="model artifact JSON")
    p.add_argument("--weights-out", default=None, help="source weight CSV (row_index,weight); density models only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt, help="score a model artifact")
    p.add_argument("--model", required=True, help="model artifact JSON")
    p.add_argument("--features", required=True, help="feature CSV or directory")
    p.add_argument("--movement", required=True, choices=MOVEMENT_CHOICES)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loio", parents=[common], formatter_class=fmt, help="leave-one-intersection-out run")
    protocol_flags(p)
    p.add_argument("--models", default="gbbw,gbm", help=f"comma separated subset of {','.join(MODEL_NAMES)}")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--boxplot", default=None, help="optional box-plot CSV")
    p.set_defaults(func=cmd_loio)

    p = sub.add_parser("ablate", parents=[common], formatter_class=fmt, help="mean MAPE against fine-tune budget")
    protocol_flags(p, budget=False)
    p.add_argument("--model", default="gbbw", choices=MODEL_NAMES)
    p.add_argument("--budgets", default=None, help="comma separated, strictly increasing; default from settings")
    p.add_argument("--out", required=True, help="ablation CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gridsearch", parents=[common], formatter_class=fmt, help="cross-validated alpha/tree search")
    protocol_flags(p)
    p.add_argument("--target", required=True, help="target intersection id")
    p.add_argument("--grid", default=None, help="grid YAML/JSON; default is the settings alpha grid")
    p.add_argument("--out", required=True, help="result JSON")
    p.set_defaults(func=cmd_gridsearch)
    return parser


def main(argv:Optional[Sequence[str]]=None) -> int:
    args = build_parser().parse_args(argv)
    if not logger.handlers:
        Logger(name='delayadapt', console=True)
    logger.setLevel({0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG))
    try:
        return args.func(args)
    except DelayAdaptError as e:
        logger.error(f"{args.command}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
