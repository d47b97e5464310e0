"""Cascade training and detection, plus the model file format.

Each stage first updates the visibility probabilities (regression + occlusion
prior), then moves the landmarks with a visibility-weighted regression.
Location targets are expressed in face-size units so one model serves faces
of any scale.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .features import DEFAULT_PATCH_RADIUS_RATIO, FeatureVector, concat_features
from .location import LocationRegressor, fit_masked, predict_update, weight_design
from .occlusion_prior import (OccluderConfig, OcclusionPrior, PriorTrainConfig,
                              synth_occlusion_labels, train_autoencoder)
from .regression import scaled_ridge
from .shape import UNIT_BOX, FaceBox, PerturbConfig, mean_shape, perturb_init, place_in_box, to_reference
from .visibility import (ExpectationTerms, InferenceConfig, VisibilityRegressor, exact_terms,
                         infer_visibility_update, loss_table, mc_terms,
                         train_visibility_regressor)

log = logging.getLogger(__name__)

MODEL_FORMAT = "robust-cascade-model"
MODEL_VERSION = 1
LOSS_TABLE_MAX_LANDMARKS = 20


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    patch_radius_ratio: float = DEFAULT_PATCH_RADIUS_RATIO
    use_shape_features: bool = True

    def __post_init__(self):
        if not self.patch_radius_ratio > 0:
            raise ValueError("patch_radius_ratio must be > 0")


@dataclass(frozen=True)
class CascadeConfig:
    iterations: int = 4
    augment_copies: int = 5
    early_stop_tol: float = 0.0  # 0 disables early stopping
    features: FeatureConfig = field(default_factory=FeatureConfig)
    use_occlusion_pattern: bool = True
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    prior: PriorTrainConfig = field(default_factory=PriorTrainConfig)
    occluder: OccluderConfig = field(default_factory=OccluderConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    visibility_ridge: float = 1.0  # times the mean Gram diagonal
    location_ridge: float = 1.0
    fit_intercept: bool = True
    visibility_exponent: float = 0.5
    occlusion_threshold: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.augment_copies < 1:
            raise ValueError("augment_copies must be >= 1")
        if self.visibility_ridge < 0 or self.location_ridge < 0:
            raise ValueError("ridge factors must be >= 0")
        if not 0 <= self.occlusion_threshold <= 1:
            raise ValueError("occlusion_threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        sections = {"features": FeatureConfig, "inference": InferenceConfig, "prior": PriorTrainConfig,
                    "occluder": OccluderConfig, "perturb": PerturbConfig}
        kwargs = {k: (sections[k](**v) if k in sections else v) for k, v in d.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class Stage:
    visibility: VisibilityRegressor
    location: LocationRegressor


@dataclass(frozen=True)
class CascadeModel:
    mean_face: np.ndarray  # unit-box frame
    stages: tuple
    prior: OcclusionPrior | None
    config: CascadeConfig
    train_log: tuple = ()

    @property
    def n_landmarks(self) -> int:
        return len(self.mean_face)

    @property
    def iterations(self) -> int:
        return len(self.stages)

    def initial_shape(self, box: FaceBox) -> np.ndarray:
        return place_in_box(self.mean_face, UNIT_BOX, box)

    @cached_property
    def prior_terms(self) -> "_PriorTerms":
        return _PriorTerms(self.prior, self.config)


@dataclass
class Detection:
    landmarks: np.ndarray
    visibility: np.ndarray
    occlusion: np.ndarray  # 1 = visible, i.e. visibility > threshold
    trace: list | None = None  # [(shape, visibility)] from initialization to the last stage


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _features(image, shape, box, config: CascadeConfig) -> FeatureVector:
    return concat_features(image, shape, box, config.features.patch_radius_ratio,
                           config.features.use_shape_features)


def _stage_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


class _PriorTerms:
    """Expectation terms for one inference call; exhaustive terms are built once and shared."""

    def __init__(self, prior, config: CascadeConfig):
        self.prior = prior if config.use_occlusion_pattern else None
        self.inference = config.inference
        self._exact = None
        self._table = None
        if self.prior is not None and self.prior.n_landmarks <= self.inference.exhaustive_threshold:
            self._exact = exact_terms(self.prior)
        elif self.prior is not None and self.prior.n_landmarks <= LOSS_TABLE_MAX_LANDMARKS:
            self._table = loss_table(self.prior)

    def terms(self, rng) -> ExpectationTerms | None:
        if self.prior is None or self.inference.lam == 0:
            return None
        if self._exact is not None:
            return self._exact
        return mc_terms(self.prior, self.inference.mc_samples, rng, self._table)


def train_occlusion_prior(mean_face, labels, config: CascadeConfig) -> OcclusionPrior:
    rng = _stage_rng(config.seed, 0)
    synth = synth_occlusion_labels(mean_face, UNIT_BOX, config.occluder, rng, config.prior.synthetic_labels)
    all_labels = np.vstack([np.asarray(labels, dtype=np.int8).reshape(-1, len(mean_face)), synth])
    return train_autoencoder(all_labels, config.prior.hidden_units, replace(config.prior, seed=config.seed))


def train_cascade(images, records, config: CascadeConfig = CascadeConfig(), workers: int = 1,
                  progress=None) -> CascadeModel:
    """Fit the occlusion prior and every cascade stage.

    ``images`` and ``records`` are parallel sequences. ``progress`` is an
    optional callback receiving one dict per finished stage.
    """
    if len(images) != len(records) or not records:
        raise ValueError("need a non-empty dataset with one image per record")
    n_lm = records[0].n_landmarks
    if any(r.n_landmarks != n_lm for r in records):
        raise ValueError("all records must share the same landmark count")

    masks = np.array([r.mask for r in records], dtype=bool)
    ref_shapes = np.array([to_reference(r.landmarks, r.box) for r in records])
    mean_face = mean_shape(ref_shapes, masks)
    labels = np.array([r.occlusion for r in records], dtype=np.int8)

    prior = train_occlusion_prior(mean_face, labels, config) if config.use_occlusion_pattern else None
    prior_terms = _PriorTerms(prior, config)

    # augmented instances: copy 0 starts from the unperturbed mean face
    inst = [(i, a) for i in range(len(records)) for a in range(config.augment_copies)]
    shapes = []
    for i, a in inst:
        rec = records[i]
        x0 = place_in_box(mean_face, UNIT_BOX, rec.box)
        if a > 0:
            x0 = perturb_init(x0, rec.box, config.perturb, _stage_rng(config.seed, 1, i, a))
        shapes.append(x0)
    shapes = np.array(shapes)
    probs = np.ones((len(inst), n_lm))
    p_star = labels[[i for i, _ in inst]].astype(float)
    inst_masks = masks[[i for i, _ in inst]]
    sizes = np.array([records[i].box.size for i, _ in inst])
    gt = np.nan_to_num(np.array([records[i].landmarks for i, _ in inst]))

    stages = []
    train_log = [_train_error(shapes, gt, inst_masks, sizes)]
    for t in range(1, config.iterations + 1):
        feats = _pmap(lambda j: _features(images[inst[j][0]], shapes[j], records[inst[j][0]].box, config),
                      range(len(inst)), workers)
        X = np.vstack([f.vector for f in feats])

        ridge = scaled_ridge(X, config.visibility_ridge, config.fit_intercept)
        T = train_visibility_regressor(X, p_star - probs, ridge, config.fit_intercept)

        def infer(j):
            rng = _stage_rng(config.seed, 2, t, *inst[j])
            res = infer_visibility_update(probs[j], feats[j], T, prior_terms.prior, config.inference,
                                          rng=rng, terms=prior_terms.terms(rng))
            return res.probs

        probs = np.array(_pmap(infer, range(len(inst)), workers))

        targets = ((gt - shapes) / sizes[:, None, None]).reshape(len(inst), -1)
        targets[np.repeat(~inst_masks, 2, axis=1)] = 0.0
        Xw = weight_design(X, probs, config.visibility_exponent)
        ridge = scaled_ridge(Xw, config.location_ridge, config.fit_intercept)
        R = fit_masked(Xw, targets, inst_masks, ridge, config.fit_intercept)
        step = np.array([predict_update(f, p, R, config.visibility_exponent) for f, p in zip(feats, probs)])
        shapes = shapes + step.reshape(shapes.shape) * sizes[:, None, None]
        stages.append(Stage(T, R))

        err = _train_error(shapes, gt, inst_masks, sizes)
        train_log.append(err)
        mean_step = float(np.mean(np.linalg.norm(step.reshape(len(inst), n_lm, 2), axis=2)))
        info = {"event": "stage", "stage": t, "train_error": err, "mean_step": mean_step}
        log.info("stage %d: train error %.5f (face-size units), mean step %.5f", t, err, mean_step)
        if progress is not None:
            progress(info)
        if config.early_stop_tol > 0 and mean_step < config.early_stop_tol:
            break

    return CascadeModel(mean_face, tuple(stages), prior, config, tuple(train_log))


def _train_error(shapes, gt, masks, sizes) -> float:
    d = np.linalg.norm(shapes - gt, axis=2) / sizes[:, None]
    return float(d[masks].mean())


def detect(image, box: FaceBox, model: CascadeModel, rng: np.random.Generator | None = None,
           trace: bool = False, initial_shape=None) -> Detection:
    """Run every stage of ``model`` from the mean face placed in ``box``."""
    config = model.config
    if rng is None:
        rng = np.random.default_rng(config.seed)
    shape = model.initial_shape(box) if initial_shape is None else np.array(initial_shape, dtype=float)
    probs = np.ones(model.n_landmarks)
    prior_terms = model.prior_terms
    history = [(shape.copy(), probs.copy())] if trace else None
    for stage in model.stages:
        feats = _features(image, shape, box, config)
        res = infer_visibility_update(probs, feats, stage.visibility, prior_terms.prior, config.inference,
                                      rng=rng, terms=prior_terms.terms(rng))
        probs = res.probs
        step = predict_update(feats, probs, stage.location, config.visibility_exponent)
        shape = shape + step.reshape(-1, 2) * box.size
        if trace:
            history.append((shape.copy(), probs.copy()))
    occlusion = (probs > config.occlusion_threshold).astype(np.int8)
    return Detection(shape, probs, occlusion, history)


# -- model file -------------------------------------------------------------

def _model_arrays(model: CascadeModel) -> dict:
    arrays = {"mean_face": model.mean_face}
    if model.prior is not None:
        for name in ("W1", "b1", "W2", "b2"):
            arrays[f"prior.{name}"] = getattr(model.prior, name)
    for t, st in enumerate(model.stages):
        arrays[f"stage{t}.T"] = st.visibility.matrix
        arrays[f"stage{t}.T_offset"] = st.visibility.offset
        arrays[f"stage{t}.R"] = st.location.matrix
        arrays[f"stage{t}.R_offset"] = st.location.offset
    return {k: np.ascontiguousarray(v, dtype="<f8") for k, v in arrays.items()}


def save_model(model: CascadeModel, path) -> None:
    """Write ``model`` as an ``.npz`` container with a JSON header.

    All numeric arrays are little-endian float64; the header declares the
    format version, landmark count, configuration and every array shape.
    """
    arrays = _model_arrays(model)
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_landmarks": model.n_landmarks,
        "iterations": model.iterations,
        "has_prior": model.prior is not None,
        "config": model.config.to_dict(),
        "train_log": list(model.train_log),
        "arrays": {k: list(v.shape) for k, v in arrays.items()},
    }
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, header=blob, **arrays)


def load_model(path) -> CascadeModel:
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    try:
        npz = np.load(path, allow_pickle=False)
        header = json.loads(bytes(npz["header"]).decode("utf-8"))
    except Exception as exc:  # noqa: BLE001 - any parse failure means a bad container
        raise ModelFormatError(f"{path}: not a model file ({exc})") from None
    if header.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: model version {header.get('version')} is not supported "
                               f"(expected {MODEL_VERSION})")
    arrays = {}
    for name, shape in header["arrays"].items():
        if name not in npz.files:
            raise ModelFormatError(f"{path}: missing array {name}")
        arr = npz[name]
        if list(arr.shape) != shape or arr.dtype != np.dtype("<f8"):
            raise ModelFormatError(f"{path}: array {name} has shape {arr.shape}/{arr.dtype}, "
                                   f"declared {shape}/<f8")
        arrays[name] = arr
    n_lm = header["n_landmarks"]
    if arrays["mean_face"].shape != (n_lm, 2):
        raise ModelFormatError(f"{path}: mean face does not match {n_lm} landmarks")
    prior = None
    if header["has_prior"]:
        prior = OcclusionPrior(*(arrays[f"prior.{k}"] for k in ("W1", "b1", "W2", "b2")))
    stages = tuple(
        Stage(VisibilityRegressor(arrays[f"stage{t}.T"], arrays[f"stage{t}.T_offset"]),
              LocationRegressor(arrays[f"stage{t}.R"], arrays[f"stage{t}.R_offset"]))
        for t in range(header["iterations"]))
    return CascadeModel(arrays["mean_face"], stages, prior, CascadeConfig.from_dict(header["config"]),
                        tuple(header.get("train_log", ())))
