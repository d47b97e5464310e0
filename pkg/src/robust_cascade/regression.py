"""Closed-form ridge least squares shared by the visibility and location regressors."""
from __future__ import annotations

import numpy as np
import scipy.linalg


class SingularSystemError(np.linalg.LinAlgError):
    pass


def scaled_ridge(X, factor: float, fit_intercept: bool = True) -> float:
    """``factor`` times the mean diagonal of the (centered) Gram matrix."""
    X = np.asarray(X, dtype=float)
    if fit_intercept:
        X = X - X.mean(axis=0)
    return factor * float(np.sum(X * X)) / max(X.shape[1], 1)


def ridge_fit(X, Y, ridge: float = 0.0, fit_intercept: bool = False):
    """Minimize ``sum_i ||Y_i - W X_i - b||^2 + ridge * ||W||_F^2``.

    Parameters
    ----------
    X : (n, f) array
    Y : (n, k) array
    ridge : non-negative penalty on ``W`` (the intercept is never penalized)

    Returns
    -------
    W : (k, f) array
    b : (k,) array, zeros when ``fit_intercept`` is False
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ValueError(f"inconsistent design {X.shape} and targets {Y.shape}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    n, f = X.shape
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
        Xc, Yc = X - x_mean, Y - y_mean
    else:
        Xc, Yc = X, Y
    if ridge == 0 and np.linalg.matrix_rank(Xc) < f:
        raise SingularSystemError(
            "least-squares system is singular (rank-deficient features); use ridge > 0")
    if f <= n:
        A = Xc.T @ Xc
        A[np.diag_indices_from(A)] += ridge
        W = scipy.linalg.solve(A, Xc.T @ Yc, assume_a="pos").T
    else:
        K = Xc @ Xc.T
        K[np.diag_indices_from(K)] += ridge
        W = (Xc.T @ scipy.linalg.solve(K, Yc, assume_a="pos")).T
    # C order keeps products bit-identical to a model reloaded from disk
    W = np.ascontiguousarray(W)
    b = y_mean - W @ x_mean if fit_intercept else np.zeros(Y.shape[1])
    return W, b
