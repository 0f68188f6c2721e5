import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr
from sklearn.pipeline import make_pipeline
from sklearn.svm import SVR

from hwnas.arch import Architecture, LayerSpec, SubgraphTemplate, full
from hwnas.exceptions import DegenerateDataWarning, DimensionMismatch, TooManyLayers
from hwnas.predictor import (
    ArchitectureEncoder,
    SVRAccuracyPredictor,
    cross_validate,
    encode,
    load_dataset,
    max_layers_for,
    rbf_kernel,
    save_dataset,
    synthetic_dataset,
)

T3 = SubgraphTemplate((full(3),))


def sin_fixture(n=50):
    x = np.linspace(0, 3, n)[:, None]
    return x, np.sin(x[:, 0])


def test_encode_examples():
    arch = Architecture.build(224, T3, [LayerSpec(full(3), 32, 64, 2)])
    assert encode(arch, 2).tolist() == [224, 3, 2, 32, 64, 0, 0, 0, 0, 0, 0]
    skipped = Architecture.build(224, T3, [LayerSpec(full(3), 32, 32, 1, True)])
    assert encode(skipped, 1).tolist() == [224, 3, 1, 32, 32, 1]
    other = Architecture.build(160, T3, [LayerSpec(full(3), 32, 64, 2)])
    assert np.flatnonzero(encode(arch, 3) != encode(other, 3)).tolist() == [0]
    with pytest.raises(TooManyLayers):
        encode(Architecture.build(224, T3, [LayerSpec(full(3), 32, 32)] * 3), 2)
    assert max_layers_for(11) == 2
    with pytest.raises(ValueError):
        max_layers_for(12)


def test_constant_targets_give_bias_only_model():
    X = np.array([[0.0], [1.0], [2.0]])
    m = SVRAccuracyPredictor().fit(X, [1.0, 1.0, 1.0])
    assert len(m.dual_coef_) == 0
    np.testing.assert_allclose(m.predict(np.array([[-5.0], [0.5], [9.0]])), 1.0)


def test_sin_training_rmse_within_tube():
    x, y = sin_fixture()
    eps = 0.05
    m = SVRAccuracyPredictor(C=10.0, epsilon=eps).fit(x, y)
    rmse = float(np.sqrt(np.mean((m.predict(x) - y) ** 2)))
    assert rmse <= eps + 0.01
    assert np.all(np.abs(m.dual_coef_) <= m.C)


def test_support_vectors_sit_on_the_tube_edge():
    x, y = sin_fixture()
    eps = 0.05
    m = SVRAccuracyPredictor(C=100.0, epsilon=eps, tol=1e-6).fit(x, y)
    free = np.abs(m.dual_coef_) < m.C
    resid = np.abs(m.predict(x[m.support_]) - y[m.support_])
    assert free.any()
    np.testing.assert_allclose(resid[free], eps, atol=1e-4)


def test_duplicated_rows_give_the_same_model():
    x, y = sin_fixture(30)
    single = SVRAccuracyPredictor(C=100.0, epsilon=0.05, tol=1e-6).fit(x, y)
    assert np.all(np.abs(single.dual_coef_) < single.C)
    double = SVRAccuracyPredictor(C=100.0, epsilon=0.05, tol=1e-6).fit(np.vstack([x, x]), np.concatenate([y, y]))
    grid = np.linspace(-0.5, 3.5, 41)[:, None]
    np.testing.assert_allclose(double.predict(grid), single.predict(grid), atol=1e-4)


def test_tiny_gamma_collapses_to_bias():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(40, 3)), rng.normal(size=40)
    m = SVRAccuracyPredictor(C=1.0, epsilon=0.1, gamma=1e-9).fit(X, y)
    np.testing.assert_allclose(m.predict(rng.normal(size=(10, 3)) * 5), m.intercept_, atol=1e-6)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    y = np.sin(X[:, 0]) + 0.3 * X[:, 1]
    order = rng.permutation(60)
    a = SVRAccuracyPredictor(C=2.0, epsilon=0.05, tol=1e-9).fit(X, y)
    b = SVRAccuracyPredictor(C=2.0, epsilon=0.05, tol=1e-9).fit(X[order], y[order])
    probe = rng.normal(size=(25, 4))
    np.testing.assert_allclose(a.predict(probe), b.predict(probe), atol=1e-6)


def test_normalization_round_trip():
    rng = np.random.default_rng(2)
    X = rng.normal(5, 3, size=(50, 3))
    y = np.tanh(X[:, 0] - 5) + 0.1 * X[:, 2]
    mean, std = X.mean(axis=0), X.std(axis=0)
    auto = SVRAccuracyPredictor(C=1.0, epsilon=0.02, gamma=0.4, tol=1e-8).fit(X, y)
    manual = SVRAccuracyPredictor(C=1.0, epsilon=0.02, gamma=0.4, tol=1e-8, normalize=False).fit((X - mean) / std, y)
    probe = rng.normal(5, 3, size=(20, 3))
    np.testing.assert_allclose(auto.predict(probe), manual.predict((probe - mean) / std), atol=1e-6)


def test_matches_sklearn_svr():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(80, 2))
    y = np.sin(X[:, 0]) * np.cos(X[:, 1]) + rng.normal(0, 0.05, 80)
    ours = SVRAccuracyPredictor(C=3.0, epsilon=0.05, gamma=0.7, tol=1e-6, normalize=False).fit(X, y)
    ref = SVR(C=3.0, epsilon=0.05, gamma=0.7, tol=1e-6).fit(X, y)
    probe = rng.uniform(-2, 2, size=(50, 2))
    np.testing.assert_allclose(ours.predict(probe), ref.predict(probe), atol=1e-3)
    assert set(ours.support_) == set(ref.support_)


def test_zero_variance_features_are_dropped():
    X = np.column_stack([np.linspace(0, 1, 10), np.ones(10)])
    with pytest.warns(DegenerateDataWarning):
        m = SVRAccuracyPredictor().fit(X, np.linspace(0, 1, 10))
    assert m.keep_.tolist() == [True, False] and m.gamma_ == 1.0
    with pytest.raises(DimensionMismatch):
        m.predict(np.ones((1, 3)))


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        SVRAccuracyPredictor().fit(np.ones((1, 2)), [1.0])
    with pytest.raises(ValueError):
        SVRAccuracyPredictor(C=0).fit(np.eye(3), [1.0, 2.0, 3.0])


def test_cv_single_point_and_leave_one_out():
    x, y = sin_fixture(12)
    res = cross_validate(x, y, [(1.0, 0.05, 0.5)], k_folds=3)
    assert res.best_params == {"C": 1.0, "epsilon": 0.05, "gamma": 0.5}
    loo = cross_validate(x, y, [(1.0, 0.05, None), (10.0, 0.05, None)], k_folds=len(y))
    assert all(len(r) == len(y) for r in loo.fold_rmse.values())
    with pytest.raises(ValueError):
        cross_validate(x, y, [(1.0, 0.1, None)], k_folds=len(y) + 1)


def test_cv_recovers_generating_gamma():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 2))
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    centers = Z[:15]
    true_gamma = 1.0
    y = rbf_kernel(Z, centers, true_gamma) @ rng.normal(size=15)
    grid_gammas = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0]
    res = cross_validate(X, y, [(10.0, 0.01, g) for g in grid_gammas], k_folds=5)
    picked = grid_gammas.index(res.best_params["gamma"])
    assert abs(picked - grid_gammas.index(true_gamma)) <= 1


def test_json_persistence(tmp_path):
    _, X, y = synthetic_dataset(60, seed=1, max_layers=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        m = SVRAccuracyPredictor(C=1.0, epsilon=0.002).fit(X, y)
    m.save(tmp_path / "model.json")
    again = SVRAccuracyPredictor.load(tmp_path / "model.json")
    np.testing.assert_array_equal(again.predict(X), m.predict(X))
    assert again.max_layers == 8
    save_dataset(tmp_path / "data.csv", X, y)
    X2, y2 = load_dataset(tmp_path / "data.csv")
    np.testing.assert_array_equal(X2, X)
    np.testing.assert_array_equal(y2, y)


def test_sklearn_pipeline_composition():
    archs, X, y = synthetic_dataset(80, seed=2, max_layers=16)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        pipe = make_pipeline(ArchitectureEncoder(16), SVRAccuracyPredictor(C=1.0, epsilon=0.002, gamma=0.01)).fit(archs, y)
        direct = SVRAccuracyPredictor(C=1.0, epsilon=0.002, gamma=0.01).fit(X, y)
    np.testing.assert_allclose(pipe.predict(archs[:10]), direct.predict_architectures(archs[:10]))


def test_rank_fidelity_on_synthetic_holdout():
    _, X, y = synthetic_dataset(400, seed=0, max_layers=16)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        m = SVRAccuracyPredictor(C=1.0, epsilon=0.002, gamma=0.01).fit(X[:200], y[:200])
    assert spearmanr(m.predict(X[200:]), y[200:]).statistic >= 0.9
