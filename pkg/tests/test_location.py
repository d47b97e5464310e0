import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_cascade.features import FeatureVector
from robust_cascade.location import (LocationRegressor, fit_masked, predict_update, train_location_regressor,
                                     weight_design, weight_features)
from robust_cascade.regression import ridge_fit, scaled_ridge


def random_fv(n_lm, rng):
    return FeatureVector(rng.uniform(size=(n_lm, 128)), rng.normal(size=n_lm * (n_lm - 1)))


def augmented_normal_equations(X, Y, ridge, intercept):
    """Independent oracle: intercept as an extra unpenalized column."""
    A = np.hstack([X, np.ones((len(X), 1))]) if intercept else X
    P = ridge * np.eye(A.shape[1])
    if intercept:
        P[-1, -1] = 0.0
    sol = np.linalg.solve(A.T @ A + P, A.T @ Y)
    return (sol[:-1].T, sol[-1]) if intercept else (sol.T, np.zeros(Y.shape[1]))


# -- weighting ----------------------------------------------------------------

def test_weight_all_ones_identity(rng):
    fv = random_fv(3, rng)
    out = weight_features(fv, np.ones(3))
    np.testing.assert_array_equal(out.vector, fv.vector)


def test_weight_zero_block(rng):
    fv = random_fv(3, rng)
    out = weight_features(fv, np.array([1.0, 0.0, 1.0]))
    assert not out.appearance[1].any()
    np.testing.assert_array_equal(out.shape, fv.shape)
    np.testing.assert_array_equal(out.appearance[[0, 2]], fv.appearance[[0, 2]])


def test_weight_quarter_halves(rng):
    fv = random_fv(2, rng)
    out = weight_features(fv, np.array([0.25, 1.0]))
    np.testing.assert_allclose(out.appearance[0], 0.5 * fv.appearance[0], rtol=1e-15)


def test_weight_design_matches_per_row(rng):
    fvs = [random_fv(4, rng) for _ in range(5)]
    probs = rng.uniform(size=(5, 4))
    X = np.vstack([f.vector for f in fvs])
    expected = np.vstack([weight_features(f, p).vector for f, p in zip(fvs, probs)])
    np.testing.assert_array_equal(weight_design(X, probs), expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_weight_monotone(n_lm, seed):
    rng = np.random.default_rng(seed)
    fv = random_fv(n_lm, rng)
    p = rng.uniform(size=n_lm)
    lower = p.copy()
    d = rng.integers(n_lm)
    lower[d] *= rng.uniform()
    a = np.abs(weight_features(fv, p).appearance)
    b = np.abs(weight_features(fv, lower).appearance)
    assert np.all(b <= a)
    again = weight_features(weight_features(fv, np.ones(n_lm)), np.ones(n_lm))
    np.testing.assert_array_equal(again.vector, fv.vector)


# -- prediction ---------------------------------------------------------------

def test_predict_zero_features_zero_update(rng):
    fv = FeatureVector(np.zeros((3, 128)), np.zeros(6))
    R = LocationRegressor(rng.normal(size=(6, len(fv))), np.zeros(6))
    np.testing.assert_array_equal(predict_update(fv, rng.uniform(size=3), R), np.zeros(6))


def test_predict_zero_regressor(rng):
    fv = random_fv(3, rng)
    R = LocationRegressor(np.zeros((6, len(fv))), np.zeros(6))
    np.testing.assert_array_equal(predict_update(fv, rng.uniform(size=3), R), np.zeros(6))


def test_predict_matches_naive_loops(rng):
    n_lm = 3
    fv = random_fv(n_lm, rng)
    p = rng.uniform(size=n_lm)
    R = LocationRegressor(rng.normal(size=(2 * n_lm, len(fv))), rng.normal(size=2 * n_lm))
    weighted = []
    for d in range(n_lm):
        for k in range(128):
            weighted.append(np.sqrt(p[d]) * fv.appearance[d, k])
    weighted.extend(fv.shape)
    expected = np.zeros(2 * n_lm)
    for r in range(2 * n_lm):
        acc = R.offset[r]
        for c in range(len(weighted)):
            acc += R.matrix[r, c] * weighted[c]
        expected[r] = acc
    np.testing.assert_allclose(predict_update(fv, p, R), expected, rtol=1e-12)


def test_predict_linear_in_weighted_features(rng):
    R = LocationRegressor(rng.normal(size=(4, 2 * 128 + 2)), np.zeros(4))
    a, b = random_fv(2, rng), random_fv(2, rng)
    p = np.ones(2)
    s = FeatureVector(a.appearance + b.appearance, a.shape + b.shape)
    np.testing.assert_allclose(predict_update(s, p, R), predict_update(a, p, R) + predict_update(b, p, R),
                               rtol=1e-10, atol=1e-10)
    k = FeatureVector(3.0 * a.appearance, 3.0 * a.shape)
    np.testing.assert_allclose(predict_update(k, p, R), 3 * predict_update(a, p, R), rtol=1e-10)


def test_predict_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        predict_update(random_fv(2, rng), np.ones(2), LocationRegressor(np.zeros((4, 3)), np.zeros(4)))


# -- masked least squares -----------------------------------------------------

def _dataset(rng, n=60, n_lm=3):
    fvs = [random_fv(n_lm, rng) for _ in range(n)]
    probs = rng.uniform(size=(n, n_lm))
    targets = rng.normal(size=(n, 2 * n_lm))
    return fvs, probs, targets


@pytest.mark.parametrize("intercept", [False, True])
def test_all_ones_mask_is_ordinary_least_squares(rng, intercept):
    fvs, probs, targets = _dataset(rng, n=40)
    masks = np.ones((40, 3), dtype=int)
    R = train_location_regressor(fvs, probs, targets, masks, ridge=0.5, fit_intercept=intercept)
    X = np.vstack([weight_features(f, p).vector for f, p in zip(fvs, probs)])
    W, b = augmented_normal_equations(X, targets, 0.5, intercept)
    np.testing.assert_allclose(R.matrix, W, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(R.offset, b, rtol=1e-6, atol=1e-10)


def test_masked_targets_do_not_leak(rng):
    fvs, probs, targets = _dataset(rng)
    masks = rng.integers(0, 2, size=(60, 3))
    masks[:5] = 1
    R1 = train_location_regressor(fvs, probs, targets, masks, ridge=0.1, fit_intercept=True)
    corrupt = targets.copy()
    for d in range(3):
        rows = masks[:, d] == 0
        corrupt[rows, 2 * d:2 * d + 2] = rng.normal(scale=1e6, size=(rows.sum(), 2))
    R2 = train_location_regressor(fvs, probs, corrupt, masks, ridge=0.1, fit_intercept=True)
    np.testing.assert_array_equal(R1.matrix, R2.matrix)
    np.testing.assert_array_equal(R1.offset, R2.offset)


def test_rows_decouple(rng):
    fvs, probs, targets = _dataset(rng)
    masks = rng.integers(0, 2, size=(60, 3))
    masks[:5] = 1
    R = train_location_regressor(fvs, probs, targets, masks, ridge=0.3, fit_intercept=True)
    X = np.vstack([weight_features(f, p).vector for f, p in zip(fvs, probs)])
    for d in range(3):
        keep = masks[:, d] == 1
        W, b = augmented_normal_equations(X[keep], targets[keep][:, 2 * d:2 * d + 2], 0.3, True)
        np.testing.assert_allclose(R.matrix[2 * d:2 * d + 2], W, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(R.offset[2 * d:2 * d + 2], b, rtol=1e-9, atol=1e-9)


def test_interpolating_fit_zero_weighted_residual(rng):
    X = rng.normal(size=(6, 4))
    W_true = rng.normal(size=(4, 4))
    Y = X @ W_true.T
    masks = np.ones((6, 2), dtype=int)
    masks[0, 1] = 0
    Y_corrupt = Y.copy()
    Y_corrupt[0, 2:] = 99.0
    R = fit_masked(X, Y_corrupt, masks, ridge=0.0)
    resid = (X @ R.matrix.T + R.offset - Y) * np.repeat(masks, 2, axis=1)
    np.testing.assert_allclose(resid, 0, atol=1e-10)


def test_unannotated_landmark_named(rng):
    fvs, probs, targets = _dataset(rng, n=10)
    masks = np.ones((10, 3), dtype=int)
    masks[:, 2] = 0
    with pytest.raises(ValueError, match="landmark 2"):
        train_location_regressor(fvs, probs, targets, masks, ridge=1.0)


# -- ridge solver -------------------------------------------------------------

@pytest.mark.parametrize("shape", [(50, 8), (8, 50)])
@pytest.mark.parametrize("intercept", [False, True])
def test_ridge_fit_primal_and_dual(rng, shape, intercept):
    X = rng.normal(size=shape)
    Y = rng.normal(size=(shape[0], 3))
    W, b = ridge_fit(X, Y, 0.7, intercept)
    W0, b0 = augmented_normal_equations(X, Y, 0.7, intercept)
    np.testing.assert_allclose(W, W0, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(b, b0, rtol=1e-6, atol=1e-10)


def test_scaled_ridge(rng):
    X = rng.normal(size=(10, 4))
    Xc = X - X.mean(0)
    assert scaled_ridge(X, 2.0, True) == pytest.approx(2.0 * np.sum(Xc ** 2) / 4)
    assert scaled_ridge(X, 2.0, False) == pytest.approx(2.0 * np.sum(X ** 2) / 4)


def test_ridge_fit_input_errors(rng):
    with pytest.raises(ValueError):
        ridge_fit(rng.normal(size=(4, 2)), rng.normal(size=(5, 1)))
    with pytest.raises(ValueError):
        ridge_fit(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)), ridge=-1)
