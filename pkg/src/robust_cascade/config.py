"""Flat ``section.key=value`` run configuration shared by every CLI command."""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

from .cascade import CascadeConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


# flat key -> (target, attribute path, help)
# target "cascade" addresses CascadeConfig, "synth" addresses SynthConfig
_KEYS = {
    "cascade.iterations": ("cascade", ("iterations",), "number of cascade stages"),
    "cascade.early_stop_tol": ("cascade", ("early_stop_tol",), "stop when mean step < tol (0 = off)"),
    "augment.copies": ("cascade", ("augment_copies",), "initializations per training image"),
    "features.patch_radius_ratio": ("cascade", ("features", "patch_radius_ratio"),
                                    "descriptor patch half-width / face size"),
    "features.use_shape_features": ("cascade", ("features", "use_shape_features"),
                                    "append pairwise shape features"),
    "inference.use_occlusion_pattern": ("cascade", ("use_occlusion_pattern",),
                                        "enable the occlusion-prior term"),
    "inference.lambda": ("cascade", ("inference", "lam"), "weight of the expected occlusion loss"),
    "inference.mc_samples": ("cascade", ("inference", "mc_samples"), "Monte Carlo sample count"),
    "inference.exhaustive_threshold": ("cascade", ("inference", "exhaustive_threshold"),
                                       "max landmarks for the exact expectation"),
    "inference.step_init": ("cascade", ("inference", "step_init"), "initial gradient step"),
    "inference.step_shrink": ("cascade", ("inference", "step_shrink"), "step factor on rejection"),
    "inference.max_iters": ("cascade", ("inference", "max_iters"), "projected-gradient iterations"),
    "inference.convergence_tol": ("cascade", ("inference", "convergence_tol"), "iterate change tolerance"),
    "inference.prob_clamp_eps": ("cascade", ("inference", "prob_clamp_eps"), "probability clamp"),
    "prior.hidden_units": ("cascade", ("prior", "hidden_units"), "autoencoder hidden units"),
    "prior.synthetic_labels": ("cascade", ("prior", "synthetic_labels"), "synthetic occlusion labels"),
    "prior.rbm_epochs": ("cascade", ("prior", "rbm_epochs"), "RBM pretraining epochs"),
    "prior.rbm_lr": ("cascade", ("prior", "rbm_lr"), "RBM learning rate"),
    "prior.rbm_batch": ("cascade", ("prior", "rbm_batch"), "RBM minibatch size"),
    "prior.finetune_epochs": ("cascade", ("prior", "finetune_epochs"), "fine-tuning epochs"),
    "prior.finetune_lr": ("cascade", ("prior", "finetune_lr"), "fine-tuning learning rate"),
    "prior.finetune_momentum": ("cascade", ("prior", "finetune_momentum"), "fine-tuning momentum"),
    "occluder.max_rectangles": ("both", ("occluder", "max_rectangles"), "max occluder rectangles"),
    "occluder.size_min": ("both", ("occluder", "size_min"), "min rectangle side / face size"),
    "occluder.size_max": ("both", ("occluder", "size_max"), "max rectangle side / face size"),
    "perturb.scale": ("cascade", ("perturb", "scale_range"), "init scale jitter (fraction)"),
    "perturb.rotation": ("cascade", ("perturb", "rotation_range"), "init rotation jitter (degrees)"),
    "perturb.translate": ("cascade", ("perturb", "translate_range"), "init shift jitter / face size"),
    "regression.visibility_ridge": ("cascade", ("visibility_ridge",), "ridge factor for visibility"),
    "regression.location_ridge": ("cascade", ("location_ridge",), "ridge factor for location"),
    "regression.fit_intercept": ("cascade", ("fit_intercept",), "fit an unpenalized offset"),
    "location.visibility_exponent": ("cascade", ("visibility_exponent",), "appearance weight p**exponent"),
    "occlusion.threshold": ("cascade", ("occlusion_threshold",), "visible iff probability > threshold"),
    "seed": ("both", ("seed",), "random seed"),
    "synth.n_samples": ("synth", ("n_samples",), "number of synthetic faces"),
    "synth.n_landmarks": ("synth", ("n_landmarks",), "landmarks per face"),
    "synth.image_size": ("synth", ("image_size",), "square image side (pixels)"),
    "synth.face_size": ("synth", ("face_size",), "nominal face box side (pixels)"),
    "synth.face_size_jitter": ("synth", ("face_size_jitter",), "relative face size jitter"),
    "synth.deformation": ("synth", ("deformation",), "non-rigid deformation / face size"),
    "synth.rotation": ("synth", ("rotation",), "face rotation range (degrees)"),
    "synth.scale": ("synth", ("scale",), "face scale range (fraction)"),
    "synth.translate": ("synth", ("translate",), "face shift range / face size"),
    "synth.occlusion_rate": ("synth", ("occlusion_rate",), "target fraction of occluded landmarks"),
    "synth.profile_prob": ("synth", ("profile_prob",), "probability of a profile (half-masked) face"),
    "synth.profile_side": ("synth", ("profile_side",), "hidden side of profile faces"),
    "synth.noise": ("synth", ("noise",), "pixel noise std"),
    "synth.glyph_length": ("synth", ("glyph_length",), "glyph long-axis FWHM / face size"),
    "synth.glyph_aspect": ("synth", ("glyph_aspect",), "glyph short / long axis"),
}


def _get(obj, path):
    for name in path:
        obj = getattr(obj, name)
    return obj


def _set(obj, path, value):
    if len(path) == 1:
        return replace(obj, **{path[0]: value})
    return replace(obj, **{path[0]: _set(getattr(obj, path[0]), path[1:], value)})


def _parse(raw, default):
    if not isinstance(raw, str):
        value = raw
    elif isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    elif isinstance(default, int):
        return int(raw)
    elif isinstance(default, float):
        return float(raw)
    else:
        return raw
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        value = int(value)
    elif isinstance(default, float):
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ValueError(f"expected a string, got {value!r}")
    return value


class RunConfig:
    """Validated flat configuration; unknown keys are rejected."""

    def __init__(self):
        self.cascade = CascadeConfig()
        self.synth = SynthConfig()

    @staticmethod
    def keys() -> list:
        return list(_KEYS)

    def get(self, key):
        target, path, _ = self._lookup(key)
        return _get(self.cascade if target != "synth" else self.synth, path)

    def set(self, key, raw) -> None:
        target, path, _ = self._lookup(key)
        default = self.get(key)
        try:
            value = _parse(raw, default)
            if target in ("cascade", "both"):
                self.cascade = _set(self.cascade, path, value)
            if target in ("synth", "both"):
                self.synth = _set(self.synth, path, value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {exc}") from None

    def update(self, mapping: dict) -> None:
        for key, value in mapping.items():
            self.set(key, value)

    def apply_overrides(self, items) -> None:
        for item in items or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, value = item.split("=", 1)
            self.set(key.strip(), value.strip())

    def load_file(self, path) -> None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
        self.update(_flatten(data))

    def as_dict(self) -> dict:
        return {k: self.get(k) for k in _KEYS}

    @staticmethod
    def _lookup(key):
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        return _KEYS[key]

    @staticmethod
    def describe() -> str:
        """One line per key with its default, for ``--help``."""
        defaults = RunConfig()
        width = max(map(len, _KEYS))
        return "\n".join(f"  {k:<{width}}  {defaults.get(k)!r:>10}  {help_}"
                         for k, (_, _, help_) in _KEYS.items())


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


__all__ = ["ConfigError", "RunConfig"]
