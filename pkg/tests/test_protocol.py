import io
import numpy as np
import pytest
from delayadapt.conf.errors import ConfigValidationError, InsufficientTargetData, ProtocolError
from delayadapt.util.ingest import build_timeline, pair_actuations, parse_event_log
from delayadapt.util.features import HOUR_MS, extract_features
from delayadapt.util.synth import ScenarioConfig, generate, make_fleet
from delayadapt.main import DelayModel, boxplot_frame, check_feasible, report_text, run_ablation, run_loio, select_finetune
from delayadapt.main.protocol import csv_text

TRAIN = dict(iterations=20, max_depth=2, min_leaf_weight=3.0)


def _model(name, **options):
    return DelayModel(name, train=TRAIN, **options)


def test_first_complete_days_selection(small_fleet):
    table = small_fleet["F-00"]
    rows = table.for_movement("left_turn")
    finetune, held = select_finetune(table, "left_turn", 24)
    assert len(finetune) == 24 and len(held) == len(rows) - 24
    assert not set(finetune.keys()) & set(held.keys())
    first_hour = min(r.hour_start_ms for r in rows)
    assert {r.hour_start_ms for r in finetune} == {first_hour + h * HOUR_MS for h in range(12)}
    assert {r.approach for r in finetune} == {"NB", "EB"}


def test_budget_zero_and_insufficient_rows(small_fleet):
    table = small_fleet["F-01"]
    finetune, held = select_finetune(table, "through", 0)
    assert len(finetune) == 0 and len(held) == len(table.for_movement("through"))
    with pytest.raises(InsufficientTargetData):
        select_finetune(table, "through", 10_000)
    with pytest.raises(InsufficientTargetData):
        # two complete days of two approaches hold 96 rows
        select_finetune(table, "through", 97)
    with pytest.raises(ConfigValidationError):
        select_finetune(table, "through", 5, policy="latest")


def test_seeded_random_selection(small_fleet):
    table = small_fleet["F-02"]
    a, _ = select_finetune(table, "left_turn", 10, "seeded_random", seed=3)
    b, _ = select_finetune(table, "left_turn", 10, "seeded_random", seed=3)
    assert len(a) == 10 and a.keys() == b.keys()


def test_feasibility_checks(small_fleet):
    with pytest.raises(ProtocolError):
        check_feasible({"F-00": small_fleet["F-00"]}, "through", 0)
    with pytest.raises(InsufficientTargetData):
        check_feasible(small_fleet, "through", 10_000)


def test_loio_folds_and_disjoint_evaluation(small_fleet):
    result = run_loio(small_fleet, {"gbm": _model("gbm")}, "through", 24, seed=1, jobs=1)
    assert result.n_folds == 3
    assert sorted(r["target"] for r in result.per_fold) == sorted(small_fleet)
    for r in result.per_fold:
        total = len(small_fleet[r["target"]].for_movement("through"))
        assert r["n_finetune"] == 24 and r["n_finetune"] + r["n_eval"] == total


def test_loio_two_intersections(small_fleet):
    fleet = {k: small_fleet[k] for k in ("F-00", "F-01")}
    result = run_loio(fleet, {"gbbw": _model("gbbw")}, "left_turn", 24, jobs=1)
    assert [r["target"] for r in result.per_fold] == ["F-00", "F-01"]


def test_identical_models_score_identically(small_fleet):
    result = run_loio(small_fleet, {"a": _model("gbbw"), "b": _model("gbbw")}, "through", 24, seed=5, jobs=1)
    assert result.fold_values("a", "mape_pct") == result.fold_values("b", "mape_pct")


def test_gbbw_at_alpha_zero_matches_source_only(small_fleet):
    result = run_loio(small_fleet, {"gbm": _model("gbm"), "gbbw0": _model("gbbw", alpha=0.0)}, "left_turn", 24,
                      jobs=1)
    for metric in ("mape_pct", "mae", "rmse"):
        assert result.fold_values("gbm", metric) == result.fold_values("gbbw0", metric)


def test_failed_fits_are_recorded_not_raised(small_fleet):
    result = run_loio(small_fleet, {"gbm": _model("gbm"), "target_only": _model("gbm_target")}, "through", 0,
                      jobs=1)
    assert len(result.fold_values("gbm", "mae")) == 3
    assert len(result.failures) == 3
    assert all(f["model"] == "target_only" and "DataError" in f["error"] for f in result.failures)
    aggregate = result.aggregate()
    assert aggregate["target_only"] == {"folds_ok": 0}
    assert aggregate["gbm"]["folds_ok"] == 3


def test_aggregate_and_exports(small_fleet):
    result = run_loio(small_fleet, {"gbm": _model("gbm")}, "through", 24, seed=2, jobs=1)
    summary = result.aggregate()["gbm"]
    values = result.fold_values("gbm", "mae")
    assert summary["mae"]["mean"] == pytest.approx(np.mean(values))
    assert summary["mae"]["median"] == pytest.approx(np.median(values))
    assert summary["pooled"]["rmse"] >= summary["pooled"]["mae"]
    frame = boxplot_frame(result)
    assert list(frame.columns) == ["model", "movement", "fold", "metric", "value"]
    assert len(frame) == 3 * 3
    again = run_loio(small_fleet, {"gbm": _model("gbm")}, "through", 24, seed=2, jobs=1)
    assert report_text(result, {"seed": 2}) == report_text(again, {"seed": 2})


def test_density_and_transfer_models_run(small_fleet):
    models = {name: _model(name) for name in ("kmm", "kliep", "ulsif", "rulsif", "iwc", "trada")}
    result = run_loio(small_fleet, models, "left_turn", 24, jobs=1)
    assert not result.failures
    assert all(len(result.fold_values(name, "mape_pct")) == 3 for name in models)


def test_per_fold_alpha_search(small_fleet):
    model = _model("gbbw", alpha="auto", alpha_grid=(0.2, 0.8))
    result = run_loio(small_fleet, {"gbbw": model}, "through", 24, jobs=1)
    assert all(r["alpha"] in (0.2, 0.8) for r in result.per_fold)


def test_ablation_curve(small_fleet):
    model = _model("gbbw")
    curve = run_ablation(small_fleet, model, "through", [24, 48], seed=1, jobs=1)
    assert list(curve.columns) == ["budget", "mean_mape_pct"]
    assert curve["budget"].tolist() == [24, 48]
    single = run_ablation(small_fleet, model, "through", [24], seed=1, jobs=1)
    loio = run_loio(small_fleet, {"model": model}, "through", 24, seed=1, jobs=1)
    assert single["mean_mape_pct"].iloc[0] == pytest.approx(loio.mean_mape("model"))
    assert csv_text(curve).splitlines()[0] == "budget,mean_mape_pct"
    with pytest.raises(ConfigValidationError):
        run_ablation(small_fleet, model, "through", [48, 24])


@pytest.mark.slow
def test_results_do_not_depend_on_jobs(small_fleet):
    models = {"gbm": _model("gbm"), "gbbw": _model("gbbw")}
    serial = run_loio(small_fleet, models, "through", 24, seed=9, jobs=1)
    parallel = run_loio(small_fleet, models, "through", 24, seed=9, jobs=3)
    assert report_text(serial, {}) == report_text(parallel, {})



@pytest.fixture(scope="module")
def shifted_fleet():
    """Ten intersections, one week each, cycle 60-120 s and demand x0.5-2
    """
    base = ScenarioConfig(intersection_id="S", days=7, seed=0)
    fleet = dict()
    for cfg in make_fleet(base, 10, {"cycle_s": [60, 120], "demand_scale": [0.5, 2.0]}, seed=0):
        result = generate(cfg)
        events = parse_event_log(io.StringIO(result.event_log_text()))
        timeline = build_timeline(events)
        pairing = pair_actuations(events, timeline, result.config)
        fleet[cfg.intersection_id] = extract_features(pairing.actuations, timeline, result.config)
    return fleet


@pytest.mark.slow
@pytest.mark.parametrize("movement,budget", [("left_turn", 72), ("through", 96)])
def test_balanced_weighting_beats_source_only_under_shift(shifted_fleet, movement, budget):
    train = dict(iterations=100)
    models = {"gbm": DelayModel("gbm", train=train), "gbbw": DelayModel("gbbw", train=train, alpha="auto")}
    result = run_loio(shifted_fleet, models, movement, budget, seed=0)
    assert not result.failures
    assert result.n_folds == 10
    assert result.mean_mape("gbbw") < result.mean_mape("gbm")


@pytest.mark.slow
def test_ablation_stabilizes_with_budget(shifted_fleet):
    model = DelayModel("gbbw", train=dict(iterations=100), alpha=0.5)
    curve = run_ablation(shifted_fleet, model, "through", [24, 48, 96, 120], seed=0)
    mape = dict(zip(curve["budget"], curve["mean_mape_pct"]))
    assert mape[96] <= mape[24]
    assert abs(mape[120] - mape[96]) < abs(mape[48] - mape[24])
