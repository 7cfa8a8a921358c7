import math
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import brentq
from delayadapt.conf.errors import (ConfigValidationError, DataError, EmptyDomain, TooFewTargetSamples,
                                    WeightLengthMismatch)
from delayadapt.util.gbm import LossSpec, TrainConfig, fit_gbm, predict_many, staged_predict
from delayadapt.util.adapt import (DomainSplit, GbbwConfig, TradaConfig, TradaEnsemble, balanced_weights,
                                   fit_gbbw, fit_tradaboost_r2, fit_weighted_gbm, grid_search, loads_model,
                                   predict_model, weighted_median)
from delayadapt.util.adapt import main as adapt_main

Q = ("x0", "x1")
SMALL = TrainConfig(iterations=15, min_leaf_weight=2.0)


def _split(rng, n1=60, n2=30, shift=0.0, n_eval=0):
    Xs = rng.uniform(0, 10, size=(n1, 2))
    Xt = rng.uniform(0, 10, size=(n2 + n_eval, 2))
    ys = 3.0 * Xs[:, 0] + Xs[:, 1] + 5.0
    yt = 3.0 * Xt[:, 0] + Xt[:, 1] + 5.0 + shift
    return DomainSplit(Xs, ys, Xt[:n2], yt[:n2], Xt[n2:], yt[n2:], manifest=Q)


def test_balanced_weights():
    assert_array_equal(balanced_weights(2, 1, 0.25), [0.75, 0.75, 0.25])
    assert_allclose(balanced_weights(3, 1, 0.5, normalize_domains=True), [1 / 3, 1 / 3, 1 / 3, 1.0])
    assert_array_equal(balanced_weights(4, 2, 0.0, normalize_domains=True), [1.0] * 4 + [0.0] * 2)
    assert_array_equal(balanced_weights(4, 2, 1.0, normalize_domains=True), [0.0] * 4 + [1.0] * 2)


@pytest.mark.parametrize("normalize", [False, True])
def test_gbbw_alpha_endpoints_reduce_to_one_domain(rng, normalize):
    split = _split(rng)
    source_only = fit_gbm(split.X_source, split.y_source, None, SMALL, manifest=Q)
    target_only = fit_gbm(split.X_finetune, split.y_finetune, None, SMALL, manifest=Q)
    assert fit_gbbw(split, GbbwConfig(0.0, SMALL, normalize)).dumps() == source_only.dumps()
    assert fit_gbbw(split, GbbwConfig(1.0, SMALL, normalize)).dumps() == target_only.dumps()


def test_gbbw_initial_constant():
    split = DomainSplit(np.array([[0.0, 0.0]]), np.array([0.0]), np.array([[1.0, 1.0]]), np.array([2.0]), manifest=Q)
    model = fit_gbbw(split, GbbwConfig(0.5, TrainConfig(iterations=0)))
    assert model.f0 == 1.0


def test_gbbw_initial_constant_minimizes_the_balanced_objective(rng):
    for _ in range(200):
        n1, n2, alpha = int(rng.integers(1, 60)), int(rng.integers(1, 30)), float(rng.uniform(0.01, 0.99))
        ys, yt = rng.normal(10, 2, size=n1), rng.normal(14, 3, size=n2)
        split = DomainSplit(rng.normal(size=(n1, 2)), ys, rng.normal(size=(n2, 2)), yt, manifest=Q)
        f0 = fit_gbbw(split, GbbwConfig(alpha, TrainConfig(iterations=0))).f0
        expected = ((1 - alpha) * ys.sum() + alpha * yt.sum()) / ((1 - alpha) * n1 + alpha * n2)
        assert f0 == pytest.approx(expected, rel=1e-9)

        def slope(g):
            return (1 - alpha) * np.sum(g - ys) + alpha * np.sum(g - yt)

        lo, hi = min(ys.min(), yt.min()) - 1.0, max(ys.max(), yt.max()) + 1.0
        assert f0 == pytest.approx(brentq(slope, lo, hi, xtol=1e-14, rtol=1e-15), rel=1e-9)


def test_gbbw_stage_multipliers_are_line_minima(rng):
    split = _split(rng, shift=4.0)
    config = GbbwConfig(0.7, TrainConfig(iterations=100, min_leaf_weight=2.0))
    model = fit_gbbw(split, config)
    X, y = split.stacked()
    w = balanced_weights(split.n_source, split.n_finetune, config.alpha)
    for F, (tree, gamma) in zip(staged_predict(model, X), model.stages):
        h = tree.predict(X)

        def objective(g):
            return float(np.dot(w, 0.5 * (y - F - g * h) ** 2))

        for step in (-1e-3, 1e-3):
            assert objective(gamma + step) >= objective(gamma) - 1e-9


def test_gbbw_needs_both_domains(rng):
    split = _split(rng)
    with pytest.raises(EmptyDomain):
        fit_gbbw(DomainSplit(split.X_source, split.y_source, np.zeros((0, 2)), np.zeros(0), manifest=Q))
    with pytest.raises(ConfigValidationError):
        GbbwConfig(alpha=1.5)


def test_weighted_gbm_reductions(rng):
    split = _split(rng)
    empty_target = DomainSplit(split.X_source, split.y_source, np.zeros((0, 2)), np.zeros(0), manifest=Q)
    assert fit_weighted_gbm(empty_target, np.ones(split.n_source), SMALL).dumps() == \
        fit_gbm(split.X_source, split.y_source, None, SMALL, manifest=Q).dumps()
    assert fit_weighted_gbm(split, np.zeros(split.n_source), SMALL).dumps() == \
        fit_gbm(split.X_finetune, split.y_finetune, None, SMALL, manifest=Q).dumps()
    with pytest.raises(WeightLengthMismatch):
        fit_weighted_gbm(split, np.ones(3), SMALL)


def test_weighted_gbm_integer_weights_equal_duplicated_rows(rng):
    split = _split(rng, n1=20, n2=10)
    weights = np.ones(split.n_source)
    weights[:5] = 2.0
    duplicated = DomainSplit(np.vstack([split.X_source, split.X_source[:5]]),
                             np.concatenate([split.y_source, split.y_source[:5]]),
                             split.X_finetune, split.y_finetune, manifest=Q)
    assert fit_weighted_gbm(split, weights, SMALL).dumps() == \
        fit_weighted_gbm(duplicated, np.ones(duplicated.n_source), SMALL).dumps()


def test_weighted_median():
    predictions = np.array([[1.0, 5.0, 3.0], [2.0, 2.0, 9.0]])
    assert_array_equal(weighted_median(predictions, np.array([1.0, 1.0, 1.0])), [3.0, 2.0])
    assert_array_equal(weighted_median(predictions, np.array([0.1, 0.1, 5.0])), [3.0, 9.0])


def test_trada_single_round_is_one_tree(rng):
    split = _split(rng)
    ensemble = fit_tradaboost_r2(split, TradaConfig(1, SMALL))
    assert len(ensemble.rounds) == 1
    tree = ensemble.rounds[0][1]
    points = rng.uniform(0, 10, size=(20, 2))
    assert_allclose(ensemble.predict_many(points), tree.predict(points))


def test_trada_weights_stay_on_the_simplex(rng, monkeypatch):
    split = _split(rng, shift=3.0)
    seen = list()
    original = adapt_main.fit_tree

    def capture(X, r, w, config):
        seen.append(np.asarray(w) / len(w))
        return original(X, r, w, config)

    monkeypatch.setattr(adapt_main, "fit_tree", capture)
    fit_tradaboost_r2(split, TradaConfig(6, SMALL))
    assert len(seen) >= 2
    for w in seen:
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0)


def test_trada_adversarial_source_loses_weight(rng):
    xt = rng.uniform(0, 10, size=(60, 1))
    xs = rng.uniform(0, 10, size=(20, 1))
    split = DomainSplit(xs, -xs[:, 0], xt, xt[:, 0], manifest=("x",))
    ensemble = fit_tradaboost_r2(split, TradaConfig(10, TrainConfig(max_depth=3, min_leaf_weight=2.0)))
    history = ensemble.source_weight_history
    assert len(history) == 10
    assert history[-1] < history[0]


def _reference_source_history(ensemble, X, y, n1, T):
    """Per-row replay of the weight updates over the ensemble's own trees
    """
    N = len(y)
    beta_src = 1.0 / (1.0 + math.sqrt(2.0 * math.log(n1) / T))
    w = [1.0 / N] * N
    history, betas = list(), list()
    for _, tree in ensemble.rounds:
        out = tree.predict(X)
        error = [abs(float(y[i]) - float(out[i])) for i in range(N)]
        largest = max(error)
        e = [err / largest for err in error]
        eps = sum(w[i] * e[i] for i in range(n1, N)) / sum(w[n1:])
        beta_t = eps / (1.0 - eps)
        w = [w[i] * beta_src ** e[i] if i < n1 else w[i] * beta_t ** (-e[i]) for i in range(N)]
        total = sum(w)
        w = [v / total for v in w]
        history.append(sum(w[:n1]))
        betas.append(beta_t)
    return history, betas


def _same_inputs(rng, n1=60, n2=30):
    xs, xt = rng.uniform(0, 10, size=(n1, 1)), rng.uniform(0, 10, size=(n2, 1))
    return xs, xt, 2.0 * xs[:, 0] + rng.normal(0, 1, size=n1), 2.0 * xt[:, 0] + rng.normal(0, 1, size=n2)


def test_trada_source_weights_follow_the_update_rule(rng):
    xs, xt, ys, yt = _same_inputs(rng)
    split = DomainSplit(xs, ys, xt, yt, manifest=("x",))
    ensemble = fit_tradaboost_r2(split, TradaConfig(5, TrainConfig(max_depth=3, min_leaf_weight=2.0)))
    assert len(ensemble.rounds) == len(ensemble.source_weight_history) >= 2
    X, y = split.stacked()
    history, betas = _reference_source_history(ensemble, X, y, split.n_source, 5)
    assert_allclose(ensemble.source_weight_history, history, rtol=1e-9)
    assert_allclose([beta for beta, _ in ensemble.rounds], betas, rtol=1e-9)
    # source rows only ever shrink relative to target rows
    shares = [split.n_source / len(y)] + list(ensemble.source_weight_history)
    assert all(b <= a for a, b in zip(shares, shares[1:]))
    assert shares[-1] < shares[0]


def test_trada_keeps_more_weight_on_a_matching_source(rng):
    xs, xt, ys, yt = _same_inputs(rng)
    config = TradaConfig(5, TrainConfig(max_depth=3, min_leaf_weight=2.0))
    matching = fit_tradaboost_r2(DomainSplit(xs, ys, xt, yt, manifest=("x",)), config)
    adversarial = fit_tradaboost_r2(DomainSplit(xs, -ys, xt, yt, manifest=("x",)), config)
    last = min(len(matching.source_weight_history), len(adversarial.source_weight_history)) - 1
    assert matching.source_weight_history[last] > adversarial.source_weight_history[last]


def test_trada_needs_two_target_rows(rng):
    split = _split(rng, n2=1)
    with pytest.raises(EmptyDomain):
        fit_tradaboost_r2(split)
    with pytest.raises(ConfigValidationError):
        TradaConfig(rounds=0)


def test_artifacts_dispatch_on_kind(rng):
    split = _split(rng)
    points = rng.uniform(0, 10, size=(15, 2))
    for model in (fit_gbbw(split, GbbwConfig(0.5, SMALL)), fit_tradaboost_r2(split, TradaConfig(4, SMALL))):
        again = loads_model(model.dumps())
        assert type(again) is type(model)
        assert_array_equal(predict_model(again, points), predict_model(model, points))
    assert isinstance(loads_model(fit_tradaboost_r2(split, TradaConfig(2, SMALL)).dumps()), TradaEnsemble)
    with pytest.raises(DataError):
        loads_model("not json")


def test_split_from_tables_rejects_overlap(small_fleet):
    table = next(iter(small_fleet.values())).for_movement("through")
    with pytest.raises(DataError):
        DomainSplit.from_tables(table, table.select([0]))
    split = DomainSplit.from_tables(table.select(range(10, len(table))), table.select(range(10)))
    assert (split.n_source, split.n_finetune) == (len(table) - 10, 10)


def test_grid_search_single_and_duplicate_points(rng):
    split = _split(rng, shift=2.0)
    single = grid_search(split, [(0.3, SMALL)])
    assert single.index == 0 and single.alpha == 0.3 and np.isfinite(single.score)
    duplicated = grid_search(split, [(0.5, SMALL), (0.5, SMALL)])
    assert duplicated.index == 0
    assert duplicated.scores[0] == duplicated.scores[1]


def test_grid_search_prefers_using_the_target_under_shift(rng):
    split = _split(rng, n1=60, n2=30, shift=40.0)
    result = grid_search(split, [(0.0, SMALL), (0.5, SMALL)])
    assert result.alpha == 0.5
    assert result.scores[1] < result.scores[0]


def test_grid_search_needs_enough_target_rows(rng):
    with pytest.raises(TooFewTargetSamples):
        grid_search(_split(rng, n2=5), [(0.5, SMALL)], k=3)
    with pytest.raises(ConfigValidationError):
        grid_search(_split(rng), [])


@pytest.mark.slow
def test_grid_search_is_independent_of_jobs(rng):
    split = _split(rng, shift=5.0)
    grid = [(a, SMALL) for a in (0.1, 0.5, 0.9)]
    assert grid_search(split, grid, jobs=1) == grid_search(split, grid, jobs=2)


def test_absolute_loss_flows_through(rng):
    split = _split(rng, shift=1.0)
    model = fit_gbbw(split, GbbwConfig(0.5, SMALL), LossSpec("absolute"))
    assert model.loss.kind == "absolute"
    assert np.all(np.isfinite(predict_many(model, split.X_finetune)))
