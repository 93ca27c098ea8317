import shutil

import numpy as np
import pandas as pd
import pytest

from dgmmkit.cli import (
    EXIT_CONFIG,
    EXIT_DIMENSION,
    EXIT_IO,
    EXIT_NON_FINITE,
    RECON_FILE,
    ROWS_FILE,
    RUN_CONFIG,
    SEED_FILE,
    error_line,
    exit_code,
    main,
)
from dgmmkit.config import RunConfig
from dgmmkit.errors import ConfigError, DgmmError, DimensionMismatch, MissingFile, NonFiniteLoss
from dgmmkit.io import MANIFEST, X_FILE, Y_FILE

TINY = """
generate.n = 40
generate.d1 = 16
generate.d2 = 10
generate.k = 2
generate.gamma = 50
generate.seed = 1
model.k = 2
model.hidden = 8
train.max_epochs = 3
train.lr = 0.01
predict.k_neighbors = 3
predict.mc_samples = 4
predict.cv_folds = 3
predict.cv_mc_samples = 2
"""


def _tree_bytes(root):
    return {str(f.relative_to(root)): f.read_bytes() for f in sorted(root.rglob("*")) if f.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> train -> reconstruct -> evaluate on a tiny config."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.txt"
    cfg.write_text(TINY)
    paths = {name: root / name for name in ("data", "train", "recon", "eval")}
    codes = [main(["generate", "-c", str(cfg), "-o", str(paths["data"])])]
    before = _tree_bytes(paths["data"])
    codes += [
        main(["train", "-c", str(cfg), "-d", str(paths["data"]), "-o", str(paths["train"])]),
        main(["reconstruct", "-c", str(cfg), "-d", str(paths["data"]), "-m", str(paths["train"] / "model"),
              "-o", str(paths["recon"])]),
        main(["evaluate", "-c", str(cfg), "-d", str(paths["data"]), "-r", str(paths["recon"]),
              "-o", str(paths["eval"])]),
    ]
    paths["config"] = cfg
    paths["data_before"] = before
    paths["root"] = root
    return codes, paths


def test_full_pipeline_succeeds(pipeline):
    codes, p = pipeline
    assert codes == [0, 0, 0, 0]
    for name in (MANIFEST, X_FILE, "truth/B.csv", RUN_CONFIG, SEED_FILE):
        assert (p["data"] / name).is_file(), name
    assert (p["train"] / "model" / "manifest.json").is_file()
    assert (p["train"] / "training_log.csv").is_file()
    assert (p["train"] / "training_bound.png").is_file()

    pred = pd.read_csv(p["recon"] / RECON_FILE, header=None)
    rows = (p["recon"] / ROWS_FILE).read_text().split()
    assert pred.shape == (4, 16) and len(rows) == 4
    assert all((p["recon"] / "images" / f"recon_{r}.png").is_file() for r in rows)

    metrics = pd.read_csv(p["eval"] / "metrics.csv")
    assert list(metrics.columns) == ["row", "pcc", "mse", "ssim"]
    assert metrics["row"].astype(str).tolist() == rows
    assert (p["eval"] / "baseline_metrics.csv").is_file()
    summary = pd.read_csv(p["eval"] / "metrics_summary.csv")
    assert summary["metric"].tolist() == ["pcc", "mse", "ssim"]


def test_commands_leave_the_dataset_untouched(pipeline):
    _, p = pipeline
    after = _tree_bytes(p["data"])
    assert sorted(after) == sorted(p["data_before"])
    for name, content in p["data_before"].items():
        assert after[name] == content, name


def test_cross_validated_rho_is_recorded(pipeline):
    _, p = pipeline
    table = pd.read_csv(p["recon"] / "rho_cv.csv")
    snapshot = RunConfig.load(p["recon"] / RUN_CONFIG)
    chosen = snapshot.rho_value()
    assert chosen is not None
    assert chosen == table.loc[table["cv_mse"].idxmin(), "rho"]
    assert "cross-validation" in (p["recon"] / RUN_CONFIG).read_text()
    assert (p["recon"] / SEED_FILE).read_text().strip() == "0"


def test_snapshot_reproduces_reconstructions(pipeline):
    _, p = pipeline
    again = p["root"] / "recon_again"
    assert main(["reconstruct", "-c", str(p["recon"] / RUN_CONFIG), "-o", str(again)]) == 0
    assert (again / RECON_FILE).read_bytes() == (p["recon"] / RECON_FILE).read_bytes()
    assert not (again / "rho_cv.csv").exists()


def test_snapshot_reproduces_training(pipeline):
    _, p = pipeline
    again = p["root"] / "train_again"
    assert main(["train", "-c", str(p["train"] / RUN_CONFIG), "-o", str(again)]) == 0
    for f in sorted((p["train"] / "model").glob("*.f64")):
        assert (again / "model" / f.name).read_bytes() == f.read_bytes(), f.name


def test_seed_override_changes_the_data(pipeline):
    _, p = pipeline
    other = p["root"] / "data_seed"
    assert main(["generate", "-c", str(p["config"]), "--seed", "2", "-o", str(other)]) == 0
    a = np.loadtxt(p["data"] / X_FILE, delimiter=",")
    b = np.loadtxt(other / X_FILE, delimiter=",")
    assert not np.array_equal(a, b)
    assert (other / SEED_FILE).read_text().strip() == "2"


def test_latent_dimension_mismatch_exits_3(pipeline, capsys):
    _, p = pipeline
    data = p["root"] / "data_k5"
    shutil.copytree(p["data"], data)
    text = (data / MANIFEST).read_text().replace("latent_dim = 2", "latent_dim = 5")
    (data / MANIFEST).write_text(text)
    code = main(["reconstruct", "-c", str(p["config"]), "-d", str(data), "-m", str(p["train"] / "model"),
                 "-o", str(p["root"] / "recon_k5")])
    assert code == EXIT_DIMENSION
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("error=DimensionMismatch message=")


def test_missing_data_path_exits_2(tmp_path, capsys):
    assert main(["train", "-o", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err == 'error=ConfigError message="data.path is required"'


def test_bad_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("model.depth = 3\n")
    assert main(["generate", "-c", str(cfg), "-o", str(tmp_path)]) == EXIT_CONFIG
    assert "unknown key" in capsys.readouterr().err


def test_missing_matrix_exits_4(pipeline, tmp_path):
    _, p = pipeline
    data = tmp_path / "data"
    shutil.copytree(p["data"], data)
    (data / X_FILE).unlink()
    code = main(["train", "-c", str(p["config"]), "-d", str(data), "-o", str(tmp_path / "out")])
    assert code == EXIT_IO


def test_exit_codes_and_error_line():
    assert exit_code(ConfigError("x")) == EXIT_CONFIG
    assert exit_code(DimensionMismatch("x")) == EXIT_DIMENSION
    assert exit_code(MissingFile("x")) == EXIT_IO
    assert exit_code(NonFiniteLoss("x")) == EXIT_NON_FINITE
    assert exit_code(DgmmError("x")) == 1
    assert error_line(ConfigError('bad "value"\nhere')) == 'error=ConfigError message="bad \\"value\\" here"'


@pytest.mark.parametrize("damage", ["empty", "ragged"])
def test_damaged_voxel_matrix_exits_4(pipeline, tmp_path, capsys, damage):
    _, p = pipeline
    data = tmp_path / "data"
    shutil.copytree(p["data"], data)
    if damage == "empty":
        (data / Y_FILE).write_text("")
    else:
        lines = (data / Y_FILE).read_text().splitlines()
        lines[3] += ",1,2,3"
        (data / Y_FILE).write_text("\n".join(lines) + "\n")
    code = main(["train", "-c", str(p["config"]), "-d", str(data), "-o", str(tmp_path / "out")])
    assert code == EXIT_IO
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("error=") and last.endswith('"')


def test_unreadable_row_ids_exit_4(pipeline, tmp_path, capsys):
    _, p = pipeline
    recon = tmp_path / "recon"
    shutil.copytree(p["recon"], recon)
    (recon / ROWS_FILE).write_text("0\nseven\n")
    code = main(["evaluate", "-c", str(p["config"]), "-d", str(p["data"]), "-r", str(recon),
                 "-o", str(tmp_path / "eval")])
    assert code == EXIT_IO
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error=IoError message=")


def test_unwritable_output_exits_4(tmp_path, capsys):
    cfg = tmp_path / "tiny.txt"
    cfg.write_text(TINY)
    blocker = tmp_path / "taken"
    blocker.write_text("a file, not a directory")
    assert main(["generate", "-c", str(cfg), "-o", str(blocker / "data")]) == EXIT_IO
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error=IoError message=")
