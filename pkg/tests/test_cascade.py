import numpy as np
import pytest

from robust_cascade.cascade import (CascadeConfig, CascadeModel, FeatureConfig, ModelFormatError, _train_error,
                                    detect, load_model, save_model, train_cascade)
from robust_cascade.features import extract_descriptors
from robust_cascade.location import weight_design
from robust_cascade.occlusion_prior import PriorTrainConfig
from robust_cascade.regression import ridge_fit, scaled_ridge
from robust_cascade.shape import UNIT_BOX, mean_shape, place_in_box, to_reference
from robust_cascade.synth import SynthConfig, generate_synthetic_dataset

SMALL_PRIOR = PriorTrainConfig(synthetic_labels=1000, rbm_epochs=10, finetune_epochs=50)


@pytest.fixture(scope="module")
def small_data():
    train = generate_synthetic_dataset(SynthConfig(n_samples=80, seed=31))
    test = generate_synthetic_dataset(SynthConfig(n_samples=20, seed=32))
    return train, test


@pytest.fixture(scope="module")
def small_model(small_data):
    (imgs, recs), _ = small_data
    return train_cascade(imgs, recs, CascadeConfig(augment_copies=2, prior=SMALL_PRIOR))


def test_default_iterations():
    assert CascadeConfig().iterations == 4
    assert CascadeConfig().occlusion_threshold == 0.6


def test_config_dict_round_trip():
    cfg = CascadeConfig(iterations=2, features=FeatureConfig(0.2, False), prior=SMALL_PRIOR, seed=5)
    assert CascadeConfig.from_dict(cfg.to_dict()) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        CascadeConfig(iterations=-1)
    with pytest.raises(ValueError):
        CascadeConfig(augment_copies=0)
    with pytest.raises(ValueError):
        CascadeConfig(occlusion_threshold=1.5)


def test_training_error_drops_after_first_stage(small_model):
    log = small_model.train_log
    assert len(log) == 5
    assert log[1] < log[0]


def test_detection_invariants_and_threshold(small_model, small_data):
    _, (imgs, recs) = small_data
    for img, rec in zip(imgs, recs):
        det = detect(img, rec.box, small_model, trace=True)
        assert len(det.trace) == small_model.iterations + 1
        for shape, probs in det.trace:
            assert np.all(np.isfinite(shape))
            assert np.all((probs >= 0) & (probs <= 1))
        np.testing.assert_array_equal(det.occlusion, (det.visibility > 0.6).astype(np.int8))


def test_detect_same_seed_identical(small_model, small_data):
    _, (imgs, recs) = small_data
    a = detect(imgs[0], recs[0].box, small_model, rng=np.random.default_rng(4))
    b = detect(imgs[0], recs[0].box, small_model, rng=np.random.default_rng(4))
    np.testing.assert_array_equal(a.landmarks, b.landmarks)
    np.testing.assert_array_equal(a.visibility, b.visibility)


def test_empty_cascade_returns_mean_face(small_data):
    (imgs, recs), (timgs, trecs) = small_data
    model = train_cascade(imgs, recs, CascadeConfig(iterations=0, prior=SMALL_PRIOR))
    assert model.iterations == 0
    det = detect(timgs[0], trecs[0].box, model)
    np.testing.assert_array_equal(det.landmarks, place_in_box(model.mean_face, UNIT_BOX, trecs[0].box))
    np.testing.assert_array_equal(det.visibility, np.ones(len(det.visibility)))


def test_model_file_round_trip(tmp_path, small_model, small_data):
    _, (imgs, recs) = small_data
    path = tmp_path / "m.npz"
    save_model(small_model, path)
    loaded = load_model(path)
    assert loaded.config == small_model.config
    a = detect(imgs[1], recs[1].box, small_model)
    b = detect(imgs[1], recs[1].box, loaded)
    np.testing.assert_array_equal(a.landmarks, b.landmarks)
    np.testing.assert_array_equal(a.visibility, b.visibility)
    arrays = np.load(path)
    assert all(arrays[k].dtype == np.dtype("<f8") for k in arrays.files if k != "header")


def test_model_version_refused(tmp_path, small_model):
    import json
    path = tmp_path / "m.npz"
    save_model(small_model, path)
    npz = dict(np.load(path))
    header = json.loads(bytes(npz["header"]).decode())
    header["version"] = 99
    npz["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    bad = tmp_path / "bad.npz"
    with open(bad, "wb") as fh:
        np.savez(fh, **npz)
    with pytest.raises(ModelFormatError, match="version 99"):
        load_model(bad)
    (tmp_path / "junk.npz").write_bytes(b"not a model")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "junk.npz")
    with pytest.raises(ModelFormatError, match="not found"):
        load_model(tmp_path / "missing.npz")


def test_all_visible_data_keeps_high_visibility():
    imgs, recs = generate_synthetic_dataset(SynthConfig(n_samples=100, seed=41, occlusion_rate=0.0))
    timgs, trecs = generate_synthetic_dataset(SynthConfig(n_samples=40, seed=42, occlusion_rate=0.0))
    model = train_cascade(imgs, recs, CascadeConfig(augment_copies=2, prior=SMALL_PRIOR))
    vis = np.concatenate([detect(i, r.box, model).visibility for i, r in zip(timgs, trecs)])
    assert np.mean(vis > 0.9) >= 0.95


def test_detection_reproduces_training_shapes():
    # 10 landmarks keeps the exhaustive expectation, so no random draws differ
    imgs, recs = generate_synthetic_dataset(SynthConfig(n_samples=40, n_landmarks=10, seed=51))
    model = train_cascade(imgs, recs, CascadeConfig(augment_copies=1, prior=SMALL_PRIOR))
    shapes = np.array([detect(i, r.box, model).landmarks for i, r in zip(imgs, recs)])
    gt = np.array([r.landmarks for r in recs])
    masks = np.array([r.mask for r in recs], dtype=bool)
    sizes = np.array([r.box.size for r in recs])
    assert _train_error(shapes, gt, masks, sizes) == model.train_log[-1]


def test_plain_cascade_ablation_matches_reference_loop():
    imgs, recs = generate_synthetic_dataset(SynthConfig(n_samples=40, seed=61))
    timgs, trecs = generate_synthetic_dataset(SynthConfig(n_samples=5, seed=62))
    cfg = CascadeConfig(iterations=3, augment_copies=1, use_occlusion_pattern=False,
                        features=FeatureConfig(use_shape_features=False))
    model = train_cascade(imgs, recs, cfg)

    # reference: visibility-weighted linear cascade written out directly
    n_lm = recs[0].n_landmarks
    ref = np.array([to_reference(r.landmarks, r.box) for r in recs])
    mean_face = mean_shape(ref)
    sizes = np.array([r.box.size for r in recs])
    shapes = np.array([place_in_box(mean_face, UNIT_BOX, r.box) for r in recs])
    probs = np.ones((len(recs), n_lm))
    p_star = np.array([r.occlusion for r in recs], dtype=float)
    gt = np.array([r.landmarks for r in recs])
    stages = []
    for _ in range(3):
        X = np.array([extract_descriptors(i, s, 0.14 * r.box.size).ravel()
                      for i, s, r in zip(imgs, shapes, recs)])
        Tw, Tb = ridge_fit(X, p_star - probs, scaled_ridge(X, 1.0, True), True)
        probs = np.clip(probs + X @ Tw.T + Tb, 0, 1)
        Xw = weight_design(X, probs)
        Rw, Rb = ridge_fit(Xw, ((gt - shapes) / sizes[:, None, None]).reshape(len(recs), -1),
                           scaled_ridge(Xw, 1.0, True), True)
        shapes = shapes + (Xw @ Rw.T + Rb).reshape(shapes.shape) * sizes[:, None, None]
        stages.append((Tw, Tb, Rw, Rb))

    for (Tw, Tb, Rw, Rb), st in zip(stages, model.stages):
        np.testing.assert_allclose(st.visibility.matrix, Tw, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(st.location.matrix, Rw, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(st.location.offset, Rb, rtol=1e-8, atol=1e-12)

    for img, rec in zip(timgs, trecs):
        det = detect(img, rec.box, model, trace=True)
        x = place_in_box(mean_face, UNIT_BOX, rec.box)
        p = np.ones(n_lm)
        for t, (Tw, Tb, Rw, Rb) in enumerate(stages, start=1):
            psi = extract_descriptors(img, x, 0.14 * rec.box.size)
            p = np.clip(p + Tw @ psi.ravel() + Tb, 0, 1)
            step = Rw @ (psi * np.sqrt(p)[:, None]).ravel() + Rb
            x = x + step.reshape(-1, 2) * rec.box.size
            np.testing.assert_allclose(det.trace[t][0], x, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(det.trace[t][1], p, rtol=1e-9, atol=1e-12)


def test_train_rejects_inconsistent_dataset(small_data):
    (imgs, recs), _ = small_data
    with pytest.raises(ValueError):
        train_cascade(imgs[:3], recs[:4], CascadeConfig())
    with pytest.raises(ValueError):
        train_cascade([], [], CascadeConfig())


def test_model_is_immutable_value(small_model):
    assert isinstance(small_model, CascadeModel)
    with pytest.raises(Exception):
        small_model.config = CascadeConfig()
