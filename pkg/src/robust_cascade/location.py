"""Visibility-weighted landmark location regression with missing annotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import DESCRIPTOR_SIZE, FeatureVector
from .regression import ridge_fit

DEFAULT_EXPONENT = 0.5


@dataclass(frozen=True)
class LocationRegressor:
    matrix: np.ndarray  # (2 * n_landmarks, n_features), interleaved x/y rows
    offset: np.ndarray  # (2 * n_landmarks,)


def weight_features(features: FeatureVector, p, exponent: float = DEFAULT_EXPONENT) -> FeatureVector:
    """Scale landmark d's appearance block by ``p_d ** exponent``; shape block unchanged."""
    p = np.asarray(p, dtype=float)
    if p.shape != (features.n_landmarks,):
        raise ValueError(f"visibility length {p.shape} != {features.n_landmarks} landmarks")
    scale = np.sqrt(p) if exponent == 0.5 else p ** exponent
    return FeatureVector(features.appearance * scale[:, None], features.shape)


def weight_design(X, probs, exponent: float = DEFAULT_EXPONENT) -> np.ndarray:
    """Row-wise :func:`weight_features` on a stacked ``(n, n_features)`` design matrix."""
    X = np.array(X, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n, n_lm = probs.shape
    scale = np.sqrt(probs) if exponent == 0.5 else probs ** exponent
    app = X[:, :n_lm * DESCRIPTOR_SIZE].reshape(n, n_lm, DESCRIPTOR_SIZE)
    app *= scale[:, :, None]
    return X


def predict_update(features: FeatureVector, p, R: LocationRegressor,
                   exponent: float = DEFAULT_EXPONENT) -> np.ndarray:
    vec = weight_features(features, p, exponent).vector
    if vec.shape[0] != R.matrix.shape[1]:
        raise ValueError(f"feature length {vec.shape[0]} != regressor width {R.matrix.shape[1]}")
    return R.matrix @ vec + R.offset


def fit_masked(X, targets, masks, ridge: float = 0.0, fit_intercept: bool = False) -> LocationRegressor:
    """Masked least squares on a prepared design matrix.

    Both coordinate rows of landmark d are fit only on samples with
    ``masks[:, d] == 1``. Landmarks sharing the same annotation pattern are
    solved together.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(targets, dtype=float)
    M = np.asarray(masks).astype(bool)
    n, n_lm = M.shape
    if Y.shape != (n, 2 * n_lm) or X.shape[0] != n:
        raise ValueError(f"inconsistent shapes: X {X.shape}, targets {Y.shape}, masks {M.shape}")
    empty = np.flatnonzero(~M.any(axis=0))
    if empty.size:
        raise ValueError(f"landmark {int(empty[0])} has no annotated training sample")

    W = np.zeros((2 * n_lm, X.shape[1]))
    b = np.zeros(2 * n_lm)
    patterns, group_of = np.unique(M.T, axis=0, return_inverse=True)
    group_of = np.asarray(group_of).ravel()
    for g, pattern in enumerate(patterns):
        lms = np.flatnonzero(group_of == g)
        rows = np.ravel(np.column_stack([2 * lms, 2 * lms + 1]))
        Wg, bg = ridge_fit(X[pattern], Y[pattern][:, rows], ridge, fit_intercept)
        W[rows] = Wg
        b[rows] = bg
    return LocationRegressor(W, b)


def train_location_regressor(features, probs, targets, masks, ridge: float = 0.0,
                             fit_intercept: bool = False,
                             exponent: float = DEFAULT_EXPONENT) -> LocationRegressor:
    """Weighted least-squares fit of ``delta_x ~ R @ (p**exponent o psi)``.

    Targets of unannotated landmarks carry zero weight, so their values
    never influence the result.
    """
    X = np.vstack([weight_features(f, p, exponent).vector for f, p in zip(features, probs)])
    return fit_masked(X, targets, masks, ridge, fit_intercept)

