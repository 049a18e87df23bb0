import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from se_predict._container import ChecksumError
from se_predict.features import fit_normalizer
from se_predict.models import (GbdtModel, GbdtParams, LinearModel, MlpConfig, MlpModel,
                               dumps_model, load_model, loads_model, mape, save_model,
                               train_gbdt, train_linear, train_mlp)
from se_predict.models import linear as lin
from se_predict.models import mlp


# --- metric ---------------------------------------------------------------

def test_mape_examples():
    assert mape([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert mape([1.0], [2.0]) == pytest.approx(0.5)
    assert mape([2.0, 1.0], [1.0, 2.0]) == pytest.approx(0.75)


def test_mape_rejects_zero_target_and_length_mismatch():
    with pytest.raises(ValueError):
        mape([1.0], [0.0])
    with pytest.raises(ValueError):
        mape([1.0, 2.0], [1.0])


@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=20),
       st.floats(0.01, 100))
@settings(max_examples=100, deadline=None)
def test_mape_scale_invariant(values, c):
    y = np.array(values)
    a = y[::-1] + 0.5
    assert mape(a, y) == pytest.approx(mape(c * a, c * y), rel=1e-12)
    assert mape(y, y) == 0.0


# --- linear ---------------------------------------------------------------

def test_linear_recovers_exact_line():
    x = np.linspace(-2, 3, 50)[:, None]
    model = train_linear(x, 3 * x[:, 0] + 1, alphas=[1e-12])
    assert model.weights[0] == pytest.approx(3, abs=1e-6)
    assert model.bias == pytest.approx(1, abs=1e-6)


def test_l1_shrinks_uninformative_weights():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 5))
    y = X @ np.array([2.0, -1.0, 0.5, 0.0, 0.0]) + 0.1 * rng.standard_normal(200)
    true_fit = train_linear(X, y)
    null_fit = train_linear(X, rng.permutation(y))
    assert np.abs(null_fit.weights).sum() < np.abs(true_fit.weights).sum()
    assert np.abs(null_fit.weights).sum() < 0.2 * np.abs(true_fit.weights).sum()


def test_cv_selects_nonzero_penalty_with_noise_features():
    rng = np.random.default_rng(1)
    n = 80
    informative = rng.standard_normal((n, 2))
    noise = rng.standard_normal((n, 30))
    y = informative @ [1.0, -2.0] + 0.5 * rng.standard_normal(n)
    model = train_linear(np.hstack([informative, noise]), y)
    grid = model.cv_alphas
    assert model.l1_strength > grid.min()
    assert np.argmin(model.cv_mse) < len(grid) - 1
    assert np.sum(model.weights[2:] != 0) < 30


def test_coordinate_descent_objective_monotone():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((60, 8))
    X[:, 1] = X[:, 0] + 0.1 * rng.standard_normal(60)  # correlated columns
    y = X @ rng.standard_normal(8) + rng.standard_normal(60)
    Xs, yc, *_ = lin._standardize(X, y)
    gram, xty, yty = Xs.T @ Xs / 60, Xs.T @ yc / 60, yc @ yc / 60
    history = []
    lin.coordinate_descent(gram, xty, 0.05, history=history, tol=1e-14)
    obj = [lin.lasso_objective(gram, xty, yty, np.zeros(8), 0.05)]
    obj += [lin.lasso_objective(gram, xty, yty, w, 0.05) for w in history]
    assert len(obj) > 3
    assert np.all(np.diff(obj) <= 1e-13)


def test_linear_predict_examples():
    model = LinearModel(np.array([2.0, -1.0, 0.5]), 4.0, 0.0)
    assert model.predict(np.zeros(3))[0] == 4.0
    assert model.predict(np.array([0.0, 1.0, 0.0]))[0] == 3.0
    X = np.random.default_rng(0).random((6, 3))
    batch = model.predict(X)
    assert np.allclose(batch, [model.predict(r)[0] for r in X])
    with pytest.raises(ValueError):
        model.predict(np.zeros(4))


def test_linear_rejects_constant_design():
    with pytest.raises(ValueError):
        train_linear(np.ones((20, 3)), np.arange(20.0))


# --- boosting -------------------------------------------------------------

def test_gbdt_constant_target():
    X = np.random.default_rng(0).random((40, 3))
    model = train_gbdt(X, np.full(40, 2.5), iterations=5)
    assert np.all(model.predict(X) == 2.5)


def test_gbdt_step_function():
    x = np.linspace(-1, 1, 200)
    y = (x >= 0).astype(float)
    model = train_gbdt(x[:, None], y, depth=1, learning_rate=0.1, subsample=1.0,
                       iterations=200)
    assert np.mean(np.abs(model.predict(x[:, None]) - y)) < 1e-3
    assert model.train_mae[-1] < 1e-3


def test_gbdt_beats_median_baseline(labeled_small):
    X, y = labeled_small
    model = train_gbdt(X, y, iterations=100)
    assert mape(model.predict(X), y) < mape(np.full_like(y, np.median(y)), y)


@pytest.mark.parametrize("lr", [0.03, 0.3, 1.0])
def test_gbdt_train_mae_non_increasing_full_sample(lr):
    rng = np.random.default_rng(3)
    X = rng.random((300, 4))
    y = np.sin(6 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(300)
    model = train_gbdt(X, y, iterations=150, subsample=1.0, learning_rate=lr, depth=4)
    mae0 = np.mean(np.abs(y - np.median(y)))
    curve = np.concatenate([[mae0], model.train_mae])
    assert np.all(np.diff(curve) <= 1e-12)


def test_gbdt_train_mae_smoothed_non_increasing_with_subsample():
    rng = np.random.default_rng(4)
    X = rng.random((400, 4))
    y = X @ [1.0, 2.0, -1.0, 0.5] + 0.05 * rng.standard_normal(400)
    model = train_gbdt(X, y, iterations=300, subsample=0.8)
    smooth = np.convolve(model.train_mae, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-12)


def test_gbdt_zero_trees_is_median():
    X = np.random.default_rng(0).random((30, 2))
    y = np.arange(30.0)
    model = train_gbdt(X, y, iterations=0)
    assert model.n_trees == 0
    assert np.all(model.predict(X) == np.median(y))


def test_gbdt_single_leaf_tree_is_constant_shift():
    model = GbdtModel(1.0, np.zeros((1, 1), dtype=np.int64), np.array([[np.inf]]),
                      np.array([[0.25, 0.0]]), 2, GbdtParams(depth=1))
    assert np.all(model.predict(np.random.default_rng(0).random((5, 2))) == 1.25)


def test_gbdt_model_invariants_and_batching():
    rng = np.random.default_rng(5)
    X = rng.random((100, 3))
    y = X[:, 0] * 3 + X[:, 2]
    model = train_gbdt(X, y, iterations=50)
    assert model.n_trees <= 50
    assert np.all(np.isfinite(model.thresholds) | (model.thresholds == np.inf))
    assert np.array_equal(model.predict(X), np.concatenate([model.predict(r) for r in X]))
    again = train_gbdt(X, y, iterations=50)
    assert np.array_equal(again.predict(X), model.predict(X))
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 4)))


def test_gbdt_parameter_validation():
    with pytest.raises(ValueError):
        GbdtParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        GbdtParams(subsample=1.5)
    with pytest.raises(ValueError):
        train_gbdt(np.zeros((5, 1)), np.zeros(5))


def test_gbdt_defaults():
    p = GbdtParams()
    assert (p.depth, p.iterations, p.learning_rate, p.subsample, p.l2_leaf_reg) == \
        (6, 1000, 0.03, 0.8, 3.0)


# --- MLP ------------------------------------------------------------------

@pytest.mark.parametrize("sizes", [[3, 4, 1], [3, 5, 4, 1]])
@pytest.mark.parametrize("wd", [0.0, 1e-2])
def test_mlp_gradient_matches_finite_differences(sizes, wd):
    rng = np.random.default_rng(0)
    weights, biases = mlp.init_params(sizes, rng)
    biases = [b + 0.1 * rng.standard_normal(b.shape) for b in biases]
    X, y = rng.standard_normal((7, sizes[0])), rng.standard_normal(7)
    _, gW, gb = mlp.loss_and_grads(weights, biases, X, y, wd)
    eps = 1e-5
    for params, grads in ((weights, gW), (biases, gb)):
        for P, G in zip(params, grads):
            num = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + eps
                up = mlp.loss_and_grads(weights, biases, X, y, wd)[0]
                P[idx] = old - eps
                down = mlp.loss_and_grads(weights, biases, X, y, wd)[0]
                P[idx] = old
                num[idx] = (up - down) / (2 * eps)
            rel = np.abs(num - G) / np.maximum(np.abs(num) + np.abs(G), 1e-8)
            assert rel.max() < 1e-4


def test_mlp_memorizes_ten_samples():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((10, 3)), rng.standard_normal(10) + 5
    cfg = MlpConfig(hidden=(32,), epochs=1500, batch_size=10, val_fraction=0.0,
                    dropout_grid=(0.0,), weight_decay_grid=(0.0,), seed=0)
    model = train_mlp(X, y, cfg)
    assert np.mean((model.predict(X) - y) ** 2) < 1e-4


def test_mlp_rejects_full_dropout():
    with pytest.raises(ValueError):
        MlpConfig(dropout_grid=(1.0,))
    with pytest.raises(ValueError):
        MlpModel([np.zeros((1, 1))], [np.zeros(1)], fit_normalizer(np.eye(2)), dropout_rate=1.0)


def test_mlp_zero_weights_give_output_bias():
    X = np.random.default_rng(0).random((10, 2))
    stats = fit_normalizer(X, np.arange(10.0))
    model = MlpModel([np.zeros((2, 3)), np.zeros((3, 1))], [np.zeros(3), np.array([0.5])],
                     stats)
    assert np.allclose(model.predict(X), 0.5 * stats.target_std + stats.target_mean)


def test_mlp_prediction_is_deterministic():
    rng = np.random.default_rng(2)
    X, y = rng.random((60, 3)), rng.random(60) + 1
    cfg = MlpConfig(hidden=(8,), epochs=5, lr_grid=(1e-2,), dropout_grid=(0.2,),
                    weight_decay_grid=(0.0,), seed=3)
    model = train_mlp(X, y, cfg)
    assert np.array_equal(model.predict(X), model.predict(X))
    assert np.array_equal(model.predict(X[[0, 0]])[0], model.predict(X[[0, 0]])[1])
    assert np.array_equal(train_mlp(X, y, cfg).predict(X), model.predict(X))
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 5)))


def test_mlp_divergent_rates_are_skipped():
    rng = np.random.default_rng(3)
    X, y = rng.random((40, 3)), rng.random(40) + 1
    cfg = MlpConfig(hidden=(8,), epochs=5, lr_grid=(1e6, 1e-2), dropout_grid=(0.0,),
                    weight_decay_grid=(0.0,))
    model = train_mlp(X, y, cfg)
    assert model.learning_rate == 1e-2


# --- persistence ----------------------------------------------------------

@pytest.fixture(scope="module")
def trained_models():
    rng = np.random.default_rng(4)
    X, y = rng.random((80, 4)), rng.random(80) + 1
    cfg = MlpConfig(hidden=(6, 5), epochs=3, lr_grid=(1e-2,), dropout_grid=(0.0,),
                    weight_decay_grid=(0.0,))
    return X, {"linear": train_linear(X, y), "gbdt": train_gbdt(X, y, iterations=20),
               "mlp": train_mlp(X, y, cfg)}


@pytest.mark.parametrize("family", ["linear", "gbdt", "mlp"])
def test_model_round_trip(tmp_path, trained_models, family):
    X, models = trained_models
    path = tmp_path / "m.seml"
    save_model(models[family], path)
    back = load_model(path, family)
    assert type(back) is type(models[family])
    assert np.array_equal(back.predict(X), models[family].predict(X))


def test_cross_family_load_is_type_error(trained_models):
    _, models = trained_models
    with pytest.raises(TypeError):
        loads_model(dumps_model(models["gbdt"]), "linear")


def test_truncated_model_fails_checksum(trained_models):
    _, models = trained_models
    blob = dumps_model(models["mlp"])
    with pytest.raises(ChecksumError):
        loads_model(blob[:-16])
