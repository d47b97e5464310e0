"""Occlusion-pattern prior: a one-hidden-layer autoencoder over binary occlusion vectors.

``loss(c)`` is the squared reconstruction error of ``c`` and penalizes
occlusion configurations unlike those seen in training (e.g. every other
landmark occluded). Training labels come from annotated data plus random
rectangle occluders dropped onto the mean face.

Occlusion vectors use 1 = visible, 0 = occluded.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .shape import FaceBox

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OccluderConfig:
    max_rectangles: int = 4
    size_min: float = 0.1  # fraction of face size
    size_max: float = 0.5

    def __post_init__(self):
        if self.max_rectangles < 0:
            raise ValueError("max_rectangles must be >= 0")
        if not (0 < self.size_min <= self.size_max):
            raise ValueError("need 0 < size_min <= size_max")


@dataclass(frozen=True)
class PriorTrainConfig:
    hidden_units: int = 25
    rbm_epochs: int = 50
    rbm_lr: float = 0.1
    rbm_batch: int = 32
    finetune_epochs: int = 200
    finetune_lr: float = 0.05
    finetune_momentum: float = 0.9
    synthetic_labels: int = 10000
    seed: int = 0


@dataclass(frozen=True)
class OcclusionPrior:
    W1: np.ndarray  # (hidden, n_landmarks)
    b1: np.ndarray
    W2: np.ndarray  # (n_landmarks, hidden)
    b2: np.ndarray

    def __post_init__(self):
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise ValueError("inconsistent autoencoder parameter shapes")
        for arr in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("autoencoder parameters must be finite")

    @property
    def n_landmarks(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    def reconstruct(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        hidden = expit(c @ self.W1.T + self.b1)
        return expit(hidden @ self.W2.T + self.b2)

    def losses(self, c) -> np.ndarray:
        """Reconstruction error for a batch ``(n, n_landmarks)`` of vectors."""
        c = np.atleast_2d(np.asarray(c, dtype=float))
        if c.shape[1] != self.n_landmarks:
            raise ValueError(f"occlusion vector length {c.shape[1]} != prior size {self.n_landmarks}")
        return np.sum((c - self.reconstruct(c)) ** 2, axis=1)

    @classmethod
    def zeros(cls, n_landmarks: int, hidden_dim: int = 1) -> "OcclusionPrior":
        return cls(np.zeros((hidden_dim, n_landmarks)), np.zeros(hidden_dim),
                   np.zeros((n_landmarks, hidden_dim)), np.zeros(n_landmarks))


def loss(c, prior: OcclusionPrior) -> float:
    return float(prior.losses(c)[0])


def rectangles_occlusion(points: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """1 where a point lies in none of ``rects`` (rows of x0, y0, x1, y1), else 0."""
    if len(rects) == 0:
        return np.ones(len(points), dtype=np.int8)
    rects = np.asarray(rects, dtype=float)
    px = points[:, 0, None]
    py = points[:, 1, None]
    inside = ((px >= rects[None, :, 0]) & (px <= rects[None, :, 2])
              & (py >= rects[None, :, 1]) & (py <= rects[None, :, 3]))
    return (~inside.any(axis=1)).astype(np.int8)


def draw_rectangles(box: FaceBox, config: OccluderConfig, rng: np.random.Generator,
                    size_scale: float = 1.0) -> np.ndarray:
    """Random occluder rectangles in ``box``: count ~ U{0..max}, centers uniform in the box."""
    count = rng.integers(0, config.max_rectangles + 1)
    centers = rng.uniform(size=(count, 2)) * [box.width, box.height] + [box.x, box.y]
    sizes = rng.uniform(config.size_min, config.size_max, size=(count, 2)) * box.size * size_scale
    return np.hstack([centers - sizes / 2, centers + sizes / 2])


def synth_occlusion_labels(mean_face, box: FaceBox, config: OccluderConfig,
                           rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` synthetic occlusion vectors from random rectangles over ``mean_face``."""
    pts = np.asarray(mean_face, dtype=float)
    out = np.empty((n, len(pts)), dtype=np.int8)
    for i in range(n):
        out[i] = rectangles_occlusion(pts, draw_rectangles(box, config, rng))
    return out


def _pretrain_rbm(data, hidden, config, rng):
    """Binary-binary RBM trained with CD-1; returns (W, hidden bias, visible bias)."""
    n, d = data.shape
    W = 0.01 * rng.standard_normal((hidden, d))
    bh = np.zeros(hidden)
    p_on = np.clip(data.mean(axis=0), 1e-3, 1 - 1e-3)
    bv = np.log(p_on / (1 - p_on))
    for _ in range(config.rbm_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.rbm_batch):
            v0 = data[order[start:start + config.rbm_batch]]
            h0 = expit(v0 @ W.T + bh)
            h_sample = (rng.uniform(size=h0.shape) < h0).astype(float)
            v1 = expit(h_sample @ W + bv)
            h1 = expit(v1 @ W.T + bh)
            m = len(v0)
            W += config.rbm_lr * (h0.T @ v0 - h1.T @ v1) / m
            bh += config.rbm_lr * (h0 - h1).mean(axis=0)
            bv += config.rbm_lr * (v0 - v1).mean(axis=0)
    return W, bh, bv


def _mean_loss_and_grads(data, params):
    """Mean per-sample squared reconstruction error and its parameter gradients."""
    W1, b1, W2, b2 = params
    n = len(data)
    h = expit(data @ W1.T + b1)
    r = expit(h @ W2.T + b2)
    d_out = 2.0 * (r - data) * r * (1 - r) / n
    d_hid = (d_out @ W2) * h * (1 - h)
    grads = [d_hid.T @ data, d_hid.sum(axis=0), d_out.T @ h, d_out.sum(axis=0)]
    return float(np.sum((r - data) ** 2) / n), grads


def _finetune(data, params, config, history=None):
    """Momentum gradient descent; appends the pre-epoch mean loss to ``history`` if given."""
    vel = [np.zeros_like(p) for p in params]
    for _ in range(config.finetune_epochs):
        value, grads = _mean_loss_and_grads(data, params)
        if history is not None:
            history.append(value)
        for p, v, g in zip(params, vel, grads):
            v *= config.finetune_momentum
            v -= config.finetune_lr * g
            p += v
    return params


def train_autoencoder(labels, hidden_dim: int | None = None,
                      config: PriorTrainConfig = PriorTrainConfig()) -> OcclusionPrior:
    """Fit the occlusion prior: RBM pretraining of the encoder, then joint fine-tuning.

    The decoder starts from the transposed RBM weights and the RBM visible bias.
    """
    data = np.asarray(labels, dtype=float)
    hidden = config.hidden_units if hidden_dim is None else hidden_dim
    if hidden < 1:
        raise ValueError("hidden_dim must be >= 1")
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("need a non-empty (n, n_landmarks) label array")
    if not np.all((data == 0) | (data == 1)):
        raise ValueError("occlusion labels must be binary")
    rng = np.random.default_rng(config.seed)
    W, bh, bv = _pretrain_rbm(data, hidden, config, rng)
    params = [W.copy(), bh.copy(), W.T.copy(), bv.copy()]
    params = _finetune(data, params, config)
    prior = OcclusionPrior(*params)
    log.debug("occlusion prior trained: mean loss %.4f", prior.losses(data).mean())
    return prior
