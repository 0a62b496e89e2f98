import pytest

from memtrain.harness.config import ConfigError, bundled_config, load_config, parse_config


@pytest.mark.parametrize("name", ["lenet", "vgg8", "resnet18"])
def test_bundled_configs_parse(name):
    cfg = load_config(bundled_config(name))
    assert cfg.model == name
    assert cfg.tile.rows == cfg.cost.tile_rows


def test_lenet_values():
    cfg = load_config(bundled_config("lenet"))
    assert (cfg.device.i_min, cfg.device.i_max, cfg.device.n_levels) == (0.82, 3.29, 4)
    assert cfg.device.max_trials == 2
    assert (cfg.trainer.batch_size, cfg.trainer.batches_per_epoch, cfg.trainer.lr) == (64, 400, 0.004)
    assert cfg.cost.copies == {"conv1": 8}
    assert cfg.transfer.sigmas == [0.5]
    assert cfg.trainer.test_subset == 2560


def test_defaults_when_empty():
    cfg = parse_config("")
    assert cfg.model == "lenet" and cfg.seed == 0


@pytest.mark.parametrize("text,match", [
    ("[device]\nfoo = 1\n", "unknown key"),
    ("[bogus]\n", "unknown sections"),
    ("[device]\nn_levels = four\n", "n_levels"),
    ("[trainer]\nscheduler = maybe\n", "boolean"),
    ("[run]\nseed = -1\n", "seed"),
    ("[run]\nseed = 18446744073709551616\n", "seed"),
    ("[run]\nmodel = alexnet\n", "model"),
    ("[run]\nepochs = 3\n", "unknown key"),
    ("[tile]\nrows = 128\n", "geometry"),
    ("[cost]\ncopies = conv1\n", "name:value"),
    ("[device]\ni_min = 5\ni_max = 1\n", "i_max"),
    ("[trainer]\nmode = turbo\n", "mode"),
    ("[data]\ndataset = imagenet\n", "dataset"),
    ("no section header\n", "section"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_typed_values():
    cfg = parse_config("[run]\nseed = 18446744073709551615\n[transfer]\nsigmas = 0.1, 0.5 1.0\n"
                       "[data]\ntrain_subset = none\n[cost]\ncopies = conv1:4, conv2:2\n")
    assert cfg.seed == 2**64 - 1
    assert cfg.transfer.sigmas == [0.1, 0.5, 1.0]
    assert cfg.data.train_subset is None
    assert cfg.cost.copies == {"conv1": 4, "conv2": 2}


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.cfg")
