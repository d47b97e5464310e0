"""Synthetic occluded faces for training and testing the cascade on small machines.

Each landmark is drawn as a dark elongated blob with its own orientation on a
light, slightly noisy background, so local descriptors carry real
information about landmark offsets. Occluders are textured gray rectangles;
a landmark is occluded iff it lies inside one of them. Optionally a fixed
half of the face is dropped as "self-occluded" (no annotation, occluded),
which mimics profile views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dataio import SampleRecord, save_dataset, write_pgm
from .occlusion_prior import OccluderConfig, draw_rectangles, rectangles_occlusion
from .shape import UNIT_BOX, FaceBox, place_in_box, similarity

# 15-point template in the unit face box
_TEMPLATE = np.array([
    [0.22, 0.38],  # 0 left eye outer
    [0.40, 0.39],  # 1 left eye inner
    [0.60, 0.39],  # 2 right eye inner
    [0.78, 0.38],  # 3 right eye outer
    [0.27, 0.24],  # 4 left brow
    [0.73, 0.24],  # 5 right brow
    [0.50, 0.55],  # 6 nose tip
    [0.40, 0.61],  # 7 left nostril
    [0.60, 0.61],  # 8 right nostril
    [0.34, 0.76],  # 9 left mouth corner
    [0.66, 0.76],  # 10 right mouth corner
    [0.50, 0.71],  # 11 upper lip
    [0.50, 0.82],  # 12 lower lip
    [0.14, 0.58],  # 13 left cheek
    [0.86, 0.58],  # 14 right cheek
])
_LEFT_SIDE = (0, 1, 4, 7, 9, 13)
_RIGHT_SIDE = (2, 3, 5, 8, 10, 14)
_PROFILE_NORMALIZER = {"left": (3, 10), "right": (0, 9)}  # visible eye outer, mouth corner


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 300
    n_landmarks: int = 15
    image_size: int = 128
    face_size: float = 80.0
    face_size_jitter: float = 0.1
    deformation: float = 0.03  # fraction of face size
    rotation: float = 15.0  # degrees
    scale: float = 0.1
    translate: float = 0.05  # fraction of face size
    occlusion_rate: float = 0.25
    occluder: OccluderConfig = field(default_factory=OccluderConfig)
    profile_prob: float = 0.0
    profile_side: str = "left"
    noise: float = 3.0
    glyph_length: float = 0.42  # long-axis FWHM / face size, 3x the default patch radius
    glyph_aspect: float = 0.43  # short / long axis
    seed: int = 0

    def __post_init__(self):
        if self.glyph_length <= 0 or not 0 < self.glyph_aspect <= 1:
            raise ValueError("glyph_length must be > 0 and glyph_aspect in (0, 1]")
        if self.n_samples < 0 or self.n_landmarks < 2 or self.image_size < 8 or self.face_size <= 0:
            raise ValueError("synthetic sizes must be positive (n_landmarks >= 2)")
        for name in ("occlusion_rate", "profile_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.profile_side not in _PROFILE_NORMALIZER:
            raise ValueError("profile_side must be 'left' or 'right'")
        if self.profile_prob > 0 and self.n_landmarks != len(_TEMPLATE):
            raise ValueError(f"profile simulation needs the {len(_TEMPLATE)}-point template")


def base_shape(n_landmarks: int) -> np.ndarray:
    """Reference landmark layout in the unit box."""
    if n_landmarks <= len(_TEMPLATE):
        return _TEMPLATE[:n_landmarks].copy()
    extra = n_landmarks - len(_TEMPLATE)
    t = np.linspace(0, 2 * np.pi, extra, endpoint=False) + 0.3
    ring = np.column_stack([0.5 + 0.42 * np.cos(t), 0.52 + 0.45 * np.sin(t)])
    return np.vstack([_TEMPLATE, ring])


def glyph_angles(n_landmarks: int) -> np.ndarray:
    return np.mod(np.arange(n_landmarks) * np.pi * 0.6180339887, np.pi)


def _deformation_modes(n_landmarks: int) -> np.ndarray:
    """Three smooth displacement fields evaluated at the base shape, (3, n, 2)."""
    pts = base_shape(n_landmarks) - 0.5
    x, y = pts[:, 0], pts[:, 1]
    open_mouth = np.column_stack([np.zeros_like(y), np.maximum(y, 0) ** 1.5 * 4])
    widen = np.column_stack([x, np.zeros_like(x)])
    shear = np.column_stack([y * x * 2, -x * np.abs(x) * 2])
    modes = np.stack([open_mouth, widen, shear])
    return modes / np.abs(modes).max(axis=(1, 2), keepdims=True)


@lru_cache(maxsize=32)
def occluder_scale(occlusion_rate: float, n_landmarks: int, occluder: OccluderConfig,
                   n_draws: int = 4000) -> float:
    """Rectangle size multiplier whose expected occluded fraction on the base shape hits the target."""
    if occlusion_rate == 0 or occluder.max_rectangles == 0:
        return 0.0
    pts = base_shape(n_landmarks)

    def rate(s):
        rng = np.random.default_rng(12345)
        hits = 0
        for _ in range(n_draws):
            hits += len(pts) - rectangles_occlusion(pts, draw_rectangles(UNIT_BOX, occluder, rng, s)).sum()
        return hits / (n_draws * len(pts))

    lo, hi = 0.0, 2.0 / occluder.size_max
    if rate(hi) < occlusion_rate:
        raise ValueError(f"occlusion rate {occlusion_rate} is not reachable with {occluder}")
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if rate(mid) < occlusion_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def render_face(shape, size: int, face_size: float, rng: np.random.Generator,
                visible_glyphs=None, noise: float = 3.0, glyph_length: float = 0.42,
                glyph_aspect: float = 0.43) -> np.ndarray:
    """Light background with one oriented dark blob per landmark (float image)."""
    pts = np.asarray(shape, dtype=float)
    rows, cols = np.mgrid[0:size, 0:size].astype(float)
    img = np.full((size, size), 200.0) + 10.0 * (cols / size - 0.5)
    angles = glyph_angles(len(pts))
    fwhm_to_sigma = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    s_long = glyph_length * face_size * fwhm_to_sigma
    s_short = glyph_aspect * s_long
    for d, (x, y) in enumerate(pts):
        if visible_glyphs is not None and not visible_glyphs[d]:
            continue
        c, s = np.cos(angles[d]), np.sin(angles[d])
        u = (cols - x) * c + (rows - y) * s
        v = -(cols - x) * s + (rows - y) * c
        img -= 130.0 * np.exp(-0.5 * ((u / s_long) ** 2 + (v / s_short) ** 2))
    img += noise * rng.standard_normal(img.shape)
    return img


def paint_occluders(img: np.ndarray, rects, rng: np.random.Generator) -> np.ndarray:
    """Overwrite every pixel whose center lies inside a rectangle with a gray texture."""
    size_r, size_c = img.shape
    rows, cols = np.mgrid[0:size_r, 0:size_c].astype(float)
    for x0, y0, x1, y1 in rects:
        inside = (cols >= x0) & (cols <= x1) & (rows >= y0) & (rows <= y1)
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.15, 0.6)
        base = rng.uniform(90, 170)
        tex = base + 25 * np.sin(freq * (cols * np.cos(theta) + rows * np.sin(theta)))
        tex += 8 * rng.standard_normal(img.shape)
        img[inside] = tex[inside]
    return img


def generate_sample(config: SynthConfig, index: int):
    """One synthetic (image, record) pair; depends only on (seed, index)."""
    rng = np.random.default_rng([config.seed, index])
    n = config.n_landmarks
    size = config.image_size
    fs = config.face_size * (1 + rng.uniform(-config.face_size_jitter, config.face_size_jitter))
    cx, cy = size / 2 + rng.uniform(-0.05, 0.05, size=2) * size
    box = FaceBox(cx - fs / 2, cy - fs / 2, fs, fs)

    coeffs = rng.standard_normal(3) * config.deformation
    unit = base_shape(n) + np.tensordot(coeffs, _deformation_modes(n), axes=1)
    gt = place_in_box(unit, UNIT_BOX, box)
    gt = similarity(gt,
                    1 + rng.uniform(-config.scale, config.scale),
                    rng.uniform(-config.rotation, config.rotation),
                    rng.uniform(-config.translate, config.translate, size=2) * box.size,
                    center=box.center)

    annotated = np.ones(n, dtype=bool)
    kind, normalizer = "inter-ocular", (0, min(3, n - 1))
    if config.profile_prob > 0 and rng.uniform() < config.profile_prob:
        hidden = _LEFT_SIDE if config.profile_side == "left" else _RIGHT_SIDE
        annotated[list(hidden)] = False
        kind, normalizer = "profile", _PROFILE_NORMALIZER[config.profile_side]

    img = render_face(gt, size, box.size, rng, visible_glyphs=annotated, noise=config.noise,
                      glyph_length=config.glyph_length, glyph_aspect=config.glyph_aspect)
    scale = occluder_scale(config.occlusion_rate, n, config.occluder)
    rects = draw_rectangles(box, config.occluder, rng, scale) if scale > 0 else np.zeros((0, 4))
    img = paint_occluders(img, rects, rng)
    occlusion = rectangles_occlusion(gt, rects) * annotated

    landmarks = np.where(annotated[:, None], gt, np.nan)
    record = SampleRecord(
        id=f"s{index:05d}",
        image=f"images/s{index:05d}.pgm",
        box=box,
        landmarks=landmarks,
        mask=annotated.astype(np.int8),
        occlusion=occlusion.astype(np.int8),
        normalizer=normalizer,
        normalizer_kind=kind,
        occluders=[list(map(float, r)) for r in rects],
    )
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), record


def generate_synthetic_dataset(config: SynthConfig, start: int = 0):
    """Return ``(images, records)`` for ``config.n_samples`` faces."""
    images, records = [], []
    for i in range(start, start + config.n_samples):
        img, rec = generate_sample(config, i)
        images.append(img)
        records.append(rec)
    return images, records


def write_synthetic_dataset(config: SynthConfig, out_dir, name: str = "dataset.jsonl",
                            start: int = 0) -> Path:
    out_dir = Path(out_dir)
    images, records = generate_synthetic_dataset(config, start)
    for img, rec in zip(images, records):
        write_pgm(out_dir / rec.image, img)
    path = out_dir / name
    save_dataset(records, path)
    return path
