"""Visibility-probability update: linear regression plus an occlusion-pattern penalty.

For a current estimate ``p_prev`` and regressed update ``a = T @ psi`` the
update ``delta`` minimizes::

    ||delta - a||^2 + lam * E_{c ~ Bernoulli(p_prev + delta)}[loss(c)]

subject to ``0 <= p_prev + delta <= 1``. The expectation is summed over all
``2**n`` occlusion vectors when ``n`` is small and otherwise estimated from a
fixed set of uniformly drawn vectors, reweighted by ``2**n / K``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureVector
from .occlusion_prior import OcclusionPrior
from .regression import ridge_fit


@dataclass(frozen=True)
class InferenceConfig:
    lam: float = 0.001
    mc_samples: int = 5000
    exhaustive_threshold: int = 12
    step_init: float = 0.1
    step_shrink: float = 0.5
    max_iters: int = 200
    convergence_tol: float = 1e-5
    prob_clamp_eps: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if not (0 < self.step_shrink < 1) or self.step_init <= 0:
            raise ValueError("need step_init > 0 and 0 < step_shrink < 1")
        if not (0 < self.prob_clamp_eps < 0.5):
            raise ValueError("prob_clamp_eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class VisibilityRegressor:
    matrix: np.ndarray  # (n_landmarks, n_features)
    offset: np.ndarray  # (n_landmarks,)

    def predict(self, features) -> np.ndarray:
        vec = features.vector if isinstance(features, FeatureVector) else np.asarray(features, float)
        if vec.shape[-1] != self.matrix.shape[1]:
            raise ValueError(f"feature length {vec.shape[-1]} != regressor width {self.matrix.shape[1]}")
        return vec @ self.matrix.T + self.offset


def _stack(features) -> np.ndarray:
    rows = [f.vector if isinstance(f, FeatureVector) else np.asarray(f, float) for f in features]
    return np.vstack(rows) if rows else np.zeros((0, 0))


def train_visibility_regressor(features, targets, ridge: float = 0.0,
                               fit_intercept: bool = False) -> VisibilityRegressor:
    """Closed-form fit of ``delta_p ~ T @ psi`` over all training samples."""
    X = _stack(features)
    Y = np.asarray(targets, dtype=float)
    W, b = ridge_fit(X, Y, ridge, fit_intercept)
    return VisibilityRegressor(W, b)


def bernoulli_prob(c, p) -> float:
    c = np.asarray(c)
    p = np.asarray(p, dtype=float)
    if c.shape != p.shape:
        raise ValueError(f"length mismatch: {c.shape} vs {p.shape}")
    return float(np.exp(_log_probs(c[None, :], p)[0]))


def _log_probs(C, p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_p, log_q = np.log(p), np.log1p(-p)
    terms = np.where(C == 1, log_p, log_q)
    return terms.sum(axis=1)


def all_occlusion_vectors(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8)


@dataclass(frozen=True)
class ExpectationTerms:
    """Fixed set of occlusion vectors with their weighted losses.

    ``E(p) = sum_j weighted_loss[j] * P(vectors[j]; p)``.
    """

    vectors: np.ndarray
    weighted_loss: np.ndarray
    exact: bool = field(default=True)

    def value(self, p) -> float:
        return float(self.weighted_loss @ np.exp(_log_probs(self.vectors, p)))

    def value_and_grad(self, p):
        probs = np.exp(_log_probs(self.vectors, p))
        wp = self.weighted_loss * probs
        on = wp @ self.vectors
        off = wp.sum() - on
        return float(wp.sum()), on / p - off / (1.0 - p)


def exact_terms(prior: OcclusionPrior) -> ExpectationTerms:
    C = all_occlusion_vectors(prior.n_landmarks)
    return ExpectationTerms(C, prior.losses(C), exact=True)


def loss_table(prior: OcclusionPrior) -> np.ndarray:
    """Loss of every occlusion vector, indexed by its bits read as a big-endian integer."""
    return prior.losses(all_occlusion_vectors(prior.n_landmarks))


def mc_terms(prior: OcclusionPrior, K: int, rng: np.random.Generator,
             table: np.ndarray | None = None) -> ExpectationTerms:
    """Uniformly drawn occlusion vectors weighted by ``2**n / K``.

    ``table`` (from :func:`loss_table`) replaces per-sample loss evaluation.
    """
    n = prior.n_landmarks
    C = rng.integers(0, 2, size=(K, n), dtype=np.int8)
    if table is None:
        losses = prior.losses(C)
    else:
        losses = table[C.astype(np.int64) @ (1 << np.arange(n - 1, -1, -1))]
    return ExpectationTerms(C, losses * (2.0 ** n / K), exact=False)


def expectation_terms(prior: OcclusionPrior, config: InferenceConfig,
                      rng: np.random.Generator | None) -> ExpectationTerms:
    if prior.n_landmarks <= config.exhaustive_threshold:
        return exact_terms(prior)
    if rng is None:
        raise ValueError("a random generator is required for the Monte Carlo expectation")
    return mc_terms(prior, config.mc_samples, rng)


def expected_loss_exact(p, prior: OcclusionPrior, exhaustive_threshold: int = 12) -> float:
    p = np.asarray(p, dtype=float)
    if len(p) > exhaustive_threshold:
        raise ValueError(f"{len(p)} landmarks exceed the exhaustive limit of {exhaustive_threshold}; "
                         "use expected_loss_mc")
    return exact_terms(prior).value(p)


def expected_loss_mc(p, prior: OcclusionPrior, K: int, rng: np.random.Generator) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    return mc_terms(prior, K, rng).value(np.asarray(p, dtype=float))


def _objective(delta, p_prev, target, terms, config, with_grad=True):
    resid = delta - target
    value = float(resid @ resid)
    grad = 2.0 * resid
    if terms is not None and config.lam > 0:
        eps = config.prob_clamp_eps
        p = np.clip(p_prev + delta, eps, 1.0 - eps)
        if with_grad:
            e, de = terms.value_and_grad(p)
            grad = grad + config.lam * de
        else:
            e = terms.value(p)
        value += config.lam * e
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite objective or gradient in visibility inference")
    return value, grad


def objective_and_gradient(delta_p, p_prev, features, T: VisibilityRegressor,
                           terms: ExpectationTerms | None, config: InferenceConfig):
    """Objective value and gradient w.r.t. ``delta_p`` on a fixed expectation sample set."""
    target = T.predict(features)
    return _objective(np.asarray(delta_p, float), np.asarray(p_prev, float), target, terms, config)


@dataclass
class InferenceResult:
    probs: np.ndarray
    delta: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int


def project_update(p_prev, delta) -> np.ndarray:
    return np.clip(delta, -p_prev, 1.0 - p_prev)


def minimize_update(p_prev, target, terms, config: InferenceConfig) -> InferenceResult:
    """Projected gradient descent with step halving on the box ``0 <= p_prev + delta <= 1``.

    Starts from the projected regression prediction, which is the exact
    minimizer when the occlusion term is off.
    """
    p_prev = np.asarray(p_prev, dtype=float)
    delta = project_update(p_prev, target)
    if terms is None or config.lam == 0:
        probs = np.clip(p_prev + delta, 0.0, 1.0)
        value = float((delta - target) @ (delta - target))
        return InferenceResult(probs, delta, [value], True, 0)

    value, grad = _objective(delta, p_prev, target, terms, config)
    trace = [value]
    step = config.step_init
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        cand = project_update(p_prev, delta - step * grad)
        if np.max(np.abs(cand - delta)) < config.convergence_tol:
            converged = True
            break
        cand_value, cand_grad = _objective(cand, p_prev, target, terms, config)
        if cand_value <= value:
            delta, value, grad = cand, cand_value, cand_grad
            trace.append(value)
        else:
            step *= config.step_shrink
            if step < 1e-14:
                converged = True
                break
    probs = np.clip(p_prev + delta, 0.0, 1.0)
    return InferenceResult(probs, delta, trace, converged, it)


def infer_visibility_update(p_prev, features, T: VisibilityRegressor, prior: OcclusionPrior | None,
                            config: InferenceConfig, rng: np.random.Generator | None = None,
                            terms: ExpectationTerms | None = None) -> InferenceResult:
    """New visibility probabilities ``clip(p_prev + delta*)``.

    ``prior=None`` disables the occlusion-pattern term. Pass precomputed
    ``terms`` to reuse an exhaustive expectation across calls.
    """
    target = T.predict(features)
    if prior is not None and config.lam > 0 and terms is None:
        terms = expectation_terms(prior, config, rng)
    if prior is None:
        terms = None
    return minimize_update(p_prev, target, terms, config)
