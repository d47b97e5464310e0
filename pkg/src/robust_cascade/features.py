"""Local appearance and shape features at the current landmark estimate.

The appearance descriptor is an upright SIFT-style histogram: a square patch
of half-width ``radius`` is resampled on a fixed 16x16 grid, gradients are
binned into 4x4 spatial cells x 8 orientations with trilinear interpolation,
and the histogram is L2-normalized with entries clamped at 0.2 before a
second normalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .shape import FaceBox

DESCRIPTOR_SIZE = 128
N_CELLS = 4
N_ORIENT = 8
N_SAMPLES = 16  # per side; 4 samples per cell
CLAMP = 0.2
DEFAULT_PATCH_RADIUS_RATIO = 0.14


@dataclass(frozen=True)
class FeatureVector:
    appearance: np.ndarray  # (n_landmarks, 128)
    shape: np.ndarray  # (n_landmarks * (n_landmarks - 1),) or empty

    @property
    def n_landmarks(self) -> int:
        return self.appearance.shape[0]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.appearance.ravel(), self.shape])

    def __len__(self):
        return self.appearance.size + self.shape.size


def _spatial_weights() -> np.ndarray:
    """(N_CELLS, N_SAMPLES) linear interpolation weights of sample index -> cell."""
    pos = (np.arange(N_SAMPLES) + 0.5) / (N_SAMPLES / N_CELLS) - 0.5
    cells = np.arange(N_CELLS)
    return np.clip(1.0 - np.abs(pos[None, :] - cells[:, None]), 0.0, None)


_CELL_W = _spatial_weights()


def _sample_patches(image: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Bilinear samples on an (N_SAMPLES + 2)^2 grid per center, edge-clamped."""
    step = 2.0 * radii / N_SAMPLES
    offs = np.arange(-1, N_SAMPLES + 1) + 0.5 - N_SAMPLES / 2
    xs = centers[:, 0, None] + offs[None, :] * step[:, None]  # (n, S+2)
    ys = centers[:, 1, None] + offs[None, :] * step[:, None]
    n, m = xs.shape
    rows = np.broadcast_to(ys[:, :, None], (n, m, m))
    cols = np.broadcast_to(xs[:, None, :], (n, m, m))
    # pixel (r, c) has its center at coordinate (c, r)
    h, w = image.shape
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    vals = map_coordinates(image, [rows.ravel(), cols.ravel()], order=1, mode="nearest")
    return vals.reshape(n, m, m)


def _descriptors_from_patches(patches: np.ndarray) -> np.ndarray:
    gx = 0.5 * (patches[:, 1:-1, 2:] - patches[:, 1:-1, :-2])
    gy = 0.5 * (patches[:, 2:, 1:-1] - patches[:, :-2, 1:-1])
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    obin = angle / (2 * np.pi / N_ORIENT)
    lo = np.floor(obin).astype(int) % N_ORIENT
    frac = obin - np.floor(obin)
    hi = (lo + 1) % N_ORIENT

    n = patches.shape[0]
    w_lo = mag * (1 - frac)
    w_hi = mag * frac
    orient = np.empty((n, N_SAMPLES, N_SAMPLES, N_ORIENT))
    for k in range(N_ORIENT):
        orient[..., k] = np.where(lo == k, w_lo, 0.0) + np.where(hi == k, w_hi, 0.0)

    hist = np.einsum("ir,jc,nrco->nijo", _CELL_W, _CELL_W, orient, optimize=True)
    hist = hist.reshape(n, DESCRIPTOR_SIZE)
    return _normalize(hist)


def _normalize(hist: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    ok = norm[:, 0] >= 1e-12
    out = np.zeros_like(hist)
    out[ok] = np.minimum(hist[ok] / norm[ok], CLAMP)
    renorm = np.linalg.norm(out[ok], axis=1, keepdims=True)
    out[ok] /= np.maximum(renorm, 1e-300)
    return out


def _check_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty grayscale raster, got shape {img.shape}")
    return img


def extract_descriptors(image, centers, radius) -> np.ndarray:
    """Descriptors at many centers at once, ``(n_centers, 128)``."""
    img = _check_image(image)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radius, dtype=float), (centers.shape[0],))
    if np.any(radii <= 0):
        raise ValueError("patch radius must be > 0")
    return _descriptors_from_patches(_sample_patches(img, centers, radii))


def extract_patch_descriptor(image, center, radius: float) -> np.ndarray:
    return extract_descriptors(image, [center], radius)[0]


def shape_features(shape, face_size: float) -> np.ndarray:
    """Pairwise coordinate differences ``(x_i - x_j, y_i - y_j) / face_size`` for i < j."""
    pts = np.asarray(shape, dtype=float)
    i, j = np.triu_indices(pts.shape[0], k=1)
    return ((pts[i] - pts[j]) / face_size).ravel()


def concat_features(image, shape, face_box: FaceBox,
                    patch_radius_ratio: float = DEFAULT_PATCH_RADIUS_RATIO,
                    use_shape_features: bool = True) -> FeatureVector:
    """Joint appearance + shape feature vector for one face.

    With ``use_shape_features=False`` the shape block is empty.
    """
    pts = np.asarray(shape, dtype=float)
    radius = patch_radius_ratio * face_box.size
    appearance = extract_descriptors(image, pts, radius)
    if use_shape_features:
        shp = shape_features(pts, face_box.size)
    else:
        shp = np.zeros(0)
    return FeatureVector(appearance, shp)


def feature_length(n_landmarks: int, use_shape_features: bool = True) -> int:
    return n_landmarks * DESCRIPTOR_SIZE + (n_landmarks * (n_landmarks - 1) if use_shape_features else 0)
