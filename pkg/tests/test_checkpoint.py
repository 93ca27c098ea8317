import json

import numpy as np
import pytest

from dgmmkit.checkpoint import FORMAT_VERSION, MANIFEST_NAME, load_model, save_model
from dgmmkit.errors import IoError, MissingFile, ShapeMismatchWithManifest
from dgmmkit.predictor import reconstruct_many


def _all_arrays(model):
    vb = model.vb
    return (model.recog.arrays() + model.gen.arrays() + [
        vb.q_b.mean, vb.q_b.cov, vb.q_h.mean, vb.q_h.cov, vb.q_zbar.mean, vb.q_zbar.cov,
        vb.q_tau.shape, vb.q_tau.rate, vb.q_eta.shape, vb.q_eta.rate,
        model.train_latent, model.train_y, model.voxel_ids, model.y_mean, model.y_std,
    ])


def test_round_trip_is_exact(tmp_path, fitted_model):
    model, _ = fitted_model
    save_model(model, tmp_path / "model")
    back = load_model(tmp_path / "model")
    for a, b in zip(_all_arrays(model), _all_arrays(back)):
        assert a.shape == b.shape and np.array_equal(a, b)
    assert back.voxel_ids.dtype == np.int64
    assert float(back.vb.q_gamma.shape) == float(model.vb.q_gamma.shape)
    assert float(back.vb.q_gamma.rate) == float(model.vb.q_gamma.rate)
    assert back.vb.hyper == model.vb.hyper
    assert back.recog.output == model.recog.output and back.gen.output == model.gen.output
    assert (back.seed, back.steps, back.pixel_log_variance) == (model.seed, model.steps, model.pixel_log_variance)


def test_loaded_model_reconstructs_identically(tmp_path, fitted_model):
    model, dataset = fitted_model
    save_model(model, tmp_path)
    back = load_model(tmp_path)
    y = model.transform_voxels(dataset.y[dataset.test])
    a = reconstruct_many(y, model, dataset.test, n_samples=4, seed=1, rho=0.5)
    b = reconstruct_many(y, back, dataset.test, n_samples=4, seed=1, rho=0.5)
    assert np.array_equal(a, b)


def test_directory_layout(tmp_path, fitted_model):
    model, _ = fitted_model
    save_model(model, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert manifest["format_version"] == FORMAT_VERSION
    assert (manifest["k"], manifest["d1"], manifest["d2"]) == (model.k, model.d1, model.d2)
    for name, shape in manifest["arrays"].items():
        f = tmp_path / f"{name}.f64"
        assert f.stat().st_size == 8 * int(np.prod(shape))
    raw = np.frombuffer((tmp_path / "vb.b_mean.f64").read_bytes(), dtype="<f8")
    assert np.array_equal(raw.reshape(model.vb.q_b.mean.shape), model.vb.q_b.mean)


def test_truncated_array(tmp_path, fitted_model):
    model, _ = fitted_model
    save_model(model, tmp_path)
    f = tmp_path / "train_y.f64"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ShapeMismatchWithManifest):
        load_model(tmp_path)


def test_missing_pieces(tmp_path, fitted_model):
    with pytest.raises(MissingFile):
        load_model(tmp_path)
    model, _ = fitted_model
    save_model(model, tmp_path)
    (tmp_path / "y_std.f64").unlink()
    with pytest.raises(MissingFile):
        load_model(tmp_path)


def test_unsupported_manifest(tmp_path, fitted_model):
    model, _ = fitted_model
    save_model(model, tmp_path)
    mf = tmp_path / MANIFEST_NAME
    manifest = json.loads(mf.read_text())
    manifest["format_version"] = 99
    mf.write_text(json.dumps(manifest))
    with pytest.raises(IoError, match="format version"):
        load_model(tmp_path)
    mf.write_text("{not json")
    with pytest.raises(IoError, match="invalid JSON"):
        load_model(tmp_path)
