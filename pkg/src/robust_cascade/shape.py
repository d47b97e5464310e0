"""Landmark shapes, face boxes and initial-shape placement.

A shape is a ``(n_landmarks, 2)`` float array of pixel coordinates. When a
shape has to be flattened into a single vector the layout is interleaved,
``(x_1, y_1, ..., x_n, y_n)``, so that the two rows belonging to one landmark
stay adjacent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FaceBox:
    x: float
    y: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"face box needs positive size, got {self.width}x{self.height}")

    @property
    def size(self) -> float:
        """Scalar face size, the mean of width and height."""
        return 0.5 * (self.width + self.height)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x + 0.5 * self.width, self.y + 0.5 * self.height])

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.width, self.height]


UNIT_BOX = FaceBox(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class PerturbConfig:
    """Uniform ranges for the similarity jitter applied to initial shapes.

    ``scale_range`` is a fraction, ``rotation_range`` is in degrees and
    ``translate_range`` is a fraction of the face size, per axis.
    """

    scale_range: float = 0.1
    rotation_range: float = 15.0
    translate_range: float = 0.05

    def __post_init__(self):
        for name in ("scale_range", "rotation_range", "translate_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.scale_range >= 1:
            raise ValueError("scale_range must be < 1")


def as_shape(coords, n_landmarks: int | None = None) -> np.ndarray:
    """Validate and convert ``coords`` to a ``(n, 2)`` float array."""
    shape = np.asarray(coords, dtype=float)
    if shape.ndim == 1 and shape.size % 2 == 0:
        shape = shape.reshape(-1, 2)
    if shape.ndim != 2 or shape.shape[1] != 2:
        raise ValueError(f"shape must be (n_landmarks, 2), got {shape.shape}")
    if n_landmarks is not None and shape.shape[0] != n_landmarks:
        raise ValueError(f"expected {n_landmarks} landmarks, got {shape.shape[0]}")
    if not np.all(np.isfinite(shape)):
        raise ValueError("shape coordinates must be finite")
    return shape


def mean_shape(shapes, masks=None) -> np.ndarray:
    """Per-landmark mean over the instances where that landmark is annotated.

    Shapes are expected to be normalized to a common reference box already.
    Unannotated entries may hold any value, including NaN.
    """
    stack = np.asarray(shapes, dtype=float)
    if stack.ndim != 3 or stack.shape[0] == 0 or stack.shape[2] != 2:
        raise ValueError("need at least one (n_landmarks, 2) shape")
    if masks is None:
        masks = np.ones(stack.shape[:2], dtype=bool)
    masks = np.asarray(masks).astype(bool)
    if masks.shape != stack.shape[:2]:
        raise ValueError(f"mask shape {masks.shape} does not match shapes {stack.shape[:2]}")
    counts = masks.sum(axis=0)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"landmark {int(missing[0])} is not annotated in any instance")
    filled = np.where(masks[..., None], stack, 0.0)
    return filled.sum(axis=0) / counts[:, None]


def place_in_box(reference, reference_box: FaceBox, target_box: FaceBox) -> np.ndarray:
    """Map coordinates from ``reference_box`` into ``target_box`` (axis-wise scale + shift)."""
    ref = np.asarray(reference, dtype=float)
    scale = np.array([target_box.width / reference_box.width,
                      target_box.height / reference_box.height])
    origin_ref = np.array([reference_box.x, reference_box.y])
    origin_tgt = np.array([target_box.x, target_box.y])
    return (ref - origin_ref) * scale + origin_tgt


def to_reference(shape, box: FaceBox, reference_box: FaceBox = UNIT_BOX) -> np.ndarray:
    """Inverse of :func:`place_in_box`."""
    return place_in_box(shape, box, reference_box)


def similarity(shape, scale: float, angle_deg: float, shift, center=None) -> np.ndarray:
    """Scale and rotate ``shape`` about ``center`` (default: centroid), then shift."""
    shape = np.asarray(shape, dtype=float)
    if center is None:
        center = shape.mean(axis=0)
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    rot = scale * np.array([[c, -s], [s, c]])
    return (shape - center) @ rot.T + center + np.asarray(shift, dtype=float)


def perturb_init(shape, box: FaceBox, config: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    """Random similarity jitter of an initial shape, drawn uniformly from ``config`` ranges."""
    scale = 1.0 + rng.uniform(-config.scale_range, config.scale_range)
    angle = rng.uniform(-config.rotation_range, config.rotation_range)
    shift = rng.uniform(-config.translate_range, config.translate_range, size=2) * box.size
    if config.scale_range == 0 and config.rotation_range == 0 and config.translate_range == 0:
        return np.array(shape, dtype=float)
    return similarity(shape, scale, angle, shift)
