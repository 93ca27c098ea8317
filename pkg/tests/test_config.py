import pytest

from dgmmkit.config import RunConfig
from dgmmkit.errors import ConfigError
from dgmmkit.types import GammaRate, MapKind

SAMPLE = """
# a small run
data.path = {data}
model.k = 4
model.k_bar = auto
model.hidden = 32,16      # trunk widths
model.gamma_rate = expected
train.max_epochs = 20
train.lr = 0.005
train.optimizer = SGD
predict.rho = 0.25
predict.bandwidth = median
screen.enabled = yes
generate.map_kind = mlp
generate.gamma = inf
output.plots = false
"""


def test_parse_sample(tmp_path):
    cfg = RunConfig.from_text(SAMPLE.format(data=tmp_path))
    assert cfg.data.path == str(tmp_path)
    assert cfg.model.k == 4 and cfg.model.k_bar is None
    assert cfg.model.hidden == (32, 16)
    assert cfg.train.max_epochs == 20 and cfg.train.lr == 0.005
    assert cfg.screen.enabled is True and cfg.output.plots is False
    assert cfg.rho_value() == 0.25 and cfg.bandwidth_value() is None
    cfg.validate("train")

    tc = cfg.train_config()
    assert tc.k == 4 and tc.hidden == (32, 16) and tc.gamma_rate is GammaRate.EXPECTED
    sc = cfg.synthetic_config()
    assert sc.map_kind is MapKind.MLP and sc.gamma == float("inf")


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.k == 10 and cfg.train.batch_size == 32 and cfg.train.lr == 1e-3
    assert cfg.train.optimizer == "rmsprop"
    assert cfg.predict.mc_samples == 64 and cfg.predict.k_neighbors == 10
    assert cfg.rho_value() is None
    assert cfg.screen.folds == 10
    assert cfg.generate.d2 == 3092


def test_text_round_trip(tmp_path):
    cfg = RunConfig.from_text(SAMPLE.format(data=tmp_path))
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg
    (tmp_path / "run.txt").write_text(cfg.to_text())
    assert RunConfig.load(tmp_path / "run.txt") == cfg


@pytest.mark.parametrize("text, fragment", [
    ("nosection = 1", "section prefix"),
    ("bogus.k = 1", "unknown section"),
    ("model.depth = 3", "unknown key"),
    ("model.k = ten", "bad value"),
    ("model.hidden = 8,0", "bad value"),
    ("screen.enabled = maybe", "bad value"),
    ("model.k = 2\nmodel.k = 3", "already set"),
    ("just text", "expected"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig.from_text(text)


def test_errors_name_the_line():
    with pytest.raises(ConfigError, match="run.txt:3"):
        RunConfig.from_text("model.k = 2\n\nmodel.k_bar = x", "run.txt")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.txt")


def test_validate(tmp_path):
    cfg = RunConfig()
    cfg.validate("generate")
    with pytest.raises(ConfigError, match="data.path"):
        cfg.validate("train")
    cfg.data.path = str(tmp_path / "absent")
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.validate("train")
    cfg.data.path = str(tmp_path)
    with pytest.raises(ConfigError, match="data.model"):
        cfg.validate("reconstruct")
    with pytest.raises(ConfigError, match="data.reconstructions"):
        cfg.validate("evaluate")


@pytest.mark.parametrize("key, value", [
    ("predict.rho", "-1"),
    ("predict.rho", "lots"),
    ("predict.bandwidth", "0"),
    ("model.gamma_rate", "exact"),
    ("train.optimizer", "adam"),
    ("generate.map_kind", "cubic"),
    ("predict.k_neighbors", "0"),
])
def test_validate_rejects_bad_values(key, value):
    cfg = RunConfig()
    cfg.set(key, value)
    with pytest.raises(ConfigError):
        cfg.validate("generate")


def test_overrides_do_not_touch_the_original(tmp_path):
    cfg = RunConfig()
    moved = cfg.with_overrides(seed=7, out=str(tmp_path), path=str(tmp_path), model=None)
    assert (moved.train.seed, moved.generate.seed, moved.predict.seed) == (7, 7, 7)
    assert moved.output.dir == str(tmp_path) and moved.data.path == str(tmp_path)
    assert moved.data.model is None
    assert cfg.train.seed == 0 and cfg.data.path is None and cfg.output.dir == "out"
