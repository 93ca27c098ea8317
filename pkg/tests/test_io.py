import numpy as np
import pytest
from numpy.testing import assert_allclose

from dgmmkit.errors import IoError, MissingFile, NonFiniteEntry, PreconditionError, ShapeMismatchWithManifest
from dgmmkit.io import (
    MANIFEST,
    X_FILE,
    Y_FILE,
    apply_voxel_transform,
    fit_voxel_transform,
    load_dataset,
    load_truth,
    read_key_values,
    read_manifest,
    read_matrix_csv,
    read_split,
    save_dataset,
    save_truth,
    write_matrix_csv,
    zscore_voxels,
)
from dgmmkit.models import DatasetManifest, TwoViewDataset
from dgmmkit.synthetic import SyntheticConfig, generate_synthetic


def _dataset(n=10, d1=4, d2=5, seed=0) -> TwoViewDataset:
    g = np.random.default_rng(seed)
    manifest = DatasetManifest(name="toy", n=n, d1=d1, d2=d2, image_width=2, image_height=2,
                               pixel_min=0.0, pixel_max=1.0, bounded=True, seed=seed)
    return TwoViewDataset(x=g.uniform(0, 1, (n, d1)), y=g.standard_normal((n, d2)) * 3 + 1,
                          train=np.arange(n - 2), test=np.array([n - 2, n - 1]), manifest=manifest)


def test_dataset_round_trip_is_exact(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.y, ds.y)
    assert np.array_equal(back.train, ds.train)
    assert np.array_equal(back.test, ds.test)
    assert back.manifest == ds.manifest


def test_manifest_comments_and_unknown_keys(tmp_path, caplog):
    ds = _dataset()
    save_dataset(ds, tmp_path)
    text = (tmp_path / MANIFEST).read_text()
    (tmp_path / MANIFEST).write_text("# comment line\n" + text + "scanner = 3T  # ignored\n")
    with caplog.at_level("WARNING", logger="dgmmkit.io"):
        m = read_manifest(tmp_path / MANIFEST)
    assert m.name == "toy" and m.n == 10 and m.bounded
    assert "scanner" in caplog.text


def test_manifest_missing_key_and_bad_line(tmp_path):
    (tmp_path / "m.txt").write_text("name = toy\nn = 3\n")
    with pytest.raises(IoError):
        read_manifest(tmp_path / "m.txt")
    (tmp_path / "bad.txt").write_text("just words\n")
    with pytest.raises(IoError):
        read_key_values(tmp_path / "bad.txt")


def test_column_count_disagreeing_with_manifest(tmp_path):
    ds = _dataset(d2=100)
    save_dataset(ds, tmp_path)
    write_matrix_csv(tmp_path / Y_FILE, ds.y[:, :99])
    with pytest.raises(ShapeMismatchWithManifest, match="10x100"):
        load_dataset(tmp_path)


def test_non_finite_entry_names_its_position(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path)
    lines = (tmp_path / X_FILE).read_text().splitlines()
    cells = lines[3].split(",")
    cells[2] = "nan"
    lines[3] = ",".join(cells)
    (tmp_path / X_FILE).write_text("\n".join(lines) + "\n")
    with pytest.raises(NonFiniteEntry, match="row 3, column 2"):
        load_dataset(tmp_path)


def test_text_cell_is_reported_as_non_finite(tmp_path):
    (tmp_path / "r.csv").write_text("1.0,2.0\n3.0,oops\n")
    with pytest.raises(NonFiniteEntry, match="row 1, column 1"):
        read_matrix_csv(tmp_path / "r.csv")


def test_missing_files(tmp_path):
    with pytest.raises(MissingFile):
        load_dataset(tmp_path / "nowhere")
    ds = _dataset()
    save_dataset(ds, tmp_path)
    (tmp_path / X_FILE).unlink()
    with pytest.raises(MissingFile):
        load_dataset(tmp_path)
    with pytest.raises(MissingFile):
        read_matrix_csv(tmp_path / "absent.csv")


def test_matrix_csv_round_trip_and_width_check(tmp_path):
    a = np.random.default_rng(3).standard_normal((3, 4))
    write_matrix_csv(tmp_path / "a.csv", a)
    assert np.array_equal(read_matrix_csv(tmp_path / "a.csv", cols=4), a)
    with pytest.raises(ShapeMismatchWithManifest):
        read_matrix_csv(tmp_path / "a.csv", cols=5)


def test_empty_matrix_file_is_a_shape_mismatch(tmp_path):
    save_dataset(_dataset(), tmp_path)
    (tmp_path / Y_FILE).write_text("")
    with pytest.raises(ShapeMismatchWithManifest, match="empty"):
        load_dataset(tmp_path)


def test_ragged_matrix_file_is_an_io_error(tmp_path):
    save_dataset(_dataset(), tmp_path)
    lines = (tmp_path / Y_FILE).read_text().splitlines()
    lines[3] += ",1,2,3"
    (tmp_path / Y_FILE).write_text("\n".join(lines) + "\n")
    with pytest.raises(IoError, match="malformed CSV"):
        load_dataset(tmp_path)


def test_empty_reconstruction_file_reads_as_no_rows(tmp_path):
    (tmp_path / "r.csv").write_text("")
    assert read_matrix_csv(tmp_path / "r.csv", cols=4).shape == (0, 4)


def test_split_file_with_text_is_an_io_error(tmp_path):
    (tmp_path / "rows.txt").write_text("3\nfour\n")
    with pytest.raises(IoError, match="one integer row id"):
        read_split(tmp_path / "rows.txt")
    (tmp_path / "ok.txt").write_text("3\n1\n")
    assert read_split(tmp_path / "ok.txt").tolist() == [3, 1]


# -------- voxel standardization --------

def test_zscore_drops_constant_columns():
    ds = _dataset()
    ds.y[:, 2] = 7.0
    z = zscore_voxels(ds)
    assert z.d2 == 4
    assert z.manifest.voxel_ids == [0, 1, 3, 4]
    assert z.manifest.dropped_voxels == [2]
    assert_allclose(z.y[z.train].mean(axis=0), 0.0, atol=1e-12)
    assert_allclose(z.y[z.train].std(axis=0), 1.0, atol=1e-12)


def test_zscore_is_idempotent():
    once = zscore_voxels(_dataset(seed=1))
    twice = zscore_voxels(once)
    assert_allclose(twice.y, once.y, atol=1e-12)
    assert twice.manifest.voxel_ids == once.manifest.voxel_ids


def test_zscore_matches_loop_oracle():
    ds = _dataset(seed=2)
    z = zscore_voxels(ds)
    rows = ds.train.tolist()
    for j in range(ds.d2):
        col = [ds.y[i, j] for i in rows]
        mean = sum(col) / len(col)
        std = (sum((v - mean) ** 2 for v in col) / len(col)) ** 0.5
        for i in range(ds.n):
            assert z.y[i, j] == pytest.approx((ds.y[i, j] - mean) / std, abs=1e-12)


def test_test_rows_use_train_statistics():
    ds = _dataset(seed=4)
    t = fit_voxel_transform(ds.y, ds.train)
    assert_allclose(t.mean, ds.y[ds.train].mean(axis=0))
    assert_allclose(t.apply(ds.y[ds.test]), (ds.y[ds.test] - t.mean) / t.std)


def test_selection_composes_with_raw_ids():
    ds = _dataset(d2=6, seed=5)
    ds.y[:, 1] = 0.0
    t = fit_voxel_transform(ds.y, ds.train).select([0, 2, 3])
    assert t.voxel_ids.tolist() == [0, 3, 4]
    assert t.dropped == [1, 2, 5]
    z = apply_voxel_transform(ds, t)
    assert z.manifest.voxel_ids == [0, 3, 4]
    assert z.manifest.dropped_voxels == [1, 2, 5]
    # a second transform on the already-selected data maps back to raw ids
    inner = fit_voxel_transform(z.y, z.train).select([1, 2])
    zz = apply_voxel_transform(z, inner)
    assert zz.manifest.voxel_ids == [3, 4]
    assert zz.manifest.dropped_voxels == [0, 1, 2, 5]


def test_empty_train_split_is_rejected():
    with pytest.raises(PreconditionError):
        fit_voxel_transform(np.zeros((3, 2)), np.array([], dtype=int))


# -------- synthetic ground truth --------

@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_truth_round_trip(tmp_path, kind):
    _, truth = generate_synthetic(SyntheticConfig(n=12, d1=9, d2=7, k=2, map_kind=kind, hidden=5, seed=8))
    save_truth(truth, tmp_path / "truth")
    back = load_truth(tmp_path / "truth")
    for name in ("b", "h", "z", "zbar", "tau", "eta"):
        assert np.array_equal(getattr(back, name), getattr(truth, name)), name
    assert back.gamma == truth.gamma and back.map_kind == kind
    assert len(back.map_weights) == len(truth.map_weights)
    for a, b in zip(back.map_weights, truth.map_weights):
        assert np.array_equal(a, b)
