import json
import subprocess
import sys

import jsonschema
import pytest

from memtrain.cli import run_cli
from memtrain.harness.config import bundled_config
from memtrain.harness.metrics import load_schema

from conftest import write_small_config


def run(*argv):
    return run_cli([str(a) for a in argv])


def test_energy_report(tmp_path, capsys):
    assert run("energy-report", "--config", bundled_config("lenet"), "--out", tmp_path / "e") == 0
    csv = (tmp_path / "e" / "energy_report.csv").read_text().split("\n")
    assert csv[1].startswith("lenet,6232,399528,6,9,641,707,0.46152,")
    assert capsys.readouterr().out.startswith("model,devices")
    data = json.loads((tmp_path / "e" / "energy_report.json").read_text())
    jsonschema.validate(data, load_schema("energy_report"))


def test_missing_config_exit_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    assert run("train", "--config", tmp_path / "nope.cfg", "--out", out) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["fly"], ["train", "--seed", "-3"],
                                  ["train", "--seed", str(2**64)], ["infer"]])
def test_usage_errors_exit_2(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "o") == 2


def test_missing_dataset_exit_3(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    cfg = write_small_config(tmp_path / "c.cfg", data={"root": empty})
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "data error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_small_config(base / "c.cfg")
    codes = [run("train", "--config", cfg, "--seed", 7, "--out", base / f"run{k}") for k in range(2)]
    codes.append(run("train", "--software", "--config", cfg, "--seed", 7, "--out", base / "sw"))
    return base, cfg, codes


OUTPUTS = ["epochs.jsonl", "summary.csv", "sparsity.json", "mappings.json", "checkpoint.bin",
           "checkpoint.bin.json"]


def test_train_is_byte_identical(trained_runs):
    base, _, codes = trained_runs
    assert codes == [0, 0, 0]
    for name in OUTPUTS:
        assert (base / "run0" / name).read_bytes() == (base / "run1" / name).read_bytes(), name


def test_train_outputs_validate(trained_runs):
    base, _, _ = trained_runs
    for line in (base / "run0" / "epochs.jsonl").read_text().splitlines():
        jsonschema.validate(json.loads(line), load_schema("epoch_stats"))
    jsonschema.validate(json.loads((base / "run0" / "sparsity.json").read_text()), load_schema("sparsity"))
    jsonschema.validate(json.loads((base / "run0" / "mappings.json").read_text()), load_schema("mappings"))
    assert not (base / "sw" / "sparsity.json").exists()


def test_infer(trained_runs):
    base, cfg, _ = trained_runs
    ck = base / "run0" / "checkpoint.bin"
    for k in range(2):
        assert run("infer", "--config", cfg, "--checkpoint", ck, "--out", base / f"inf{k}") == 0
    data = json.loads((base / "inf0" / "infer.json").read_text())
    jsonschema.validate(data, load_schema("infer"))
    assert data["images"] == 100 and data["mode"] == "cim"
    assert sum(map(sum, data["confusion"])) == 100
    for name in ("infer.json", "confusion.csv"):
        assert (base / "inf0" / name).read_bytes() == (base / "inf1" / name).read_bytes()


def test_transfer_eval(trained_runs):
    base, cfg, _ = trained_runs
    args = ["--checkpoint", base / "run0" / "checkpoint.bin", "--checkpoint", base / "sw" / "checkpoint.bin"]
    assert run("transfer-eval", "--config", cfg, *args, "--out", base / "t0", "--workers", 1) == 0
    assert run("transfer-eval", "--config", cfg, *args, "--out", base / "t1", "--workers", 2) == 0
    for name in ("transfer_trials.csv", "transfer_summary.json"):
        assert (base / "t0" / name).read_bytes() == (base / "t1" / name).read_bytes()
    data = json.loads((base / "t0" / "transfer_summary.json").read_text())
    jsonschema.validate(data, load_schema("transfer_summary"))
    assert {g["kind"] for g in data["groups"]} == {"mixed", "software"}


def test_corrupt_checkpoint_exit_3(trained_runs, tmp_path):
    base, cfg, _ = trained_runs
    bad = tmp_path / "checkpoint.bin"
    bad.write_bytes((base / "run0" / "checkpoint.bin").read_bytes()[:100])
    (tmp_path / "checkpoint.bin.json").write_bytes((base / "run0" / "checkpoint.bin.json").read_bytes())
    assert run("infer", "--config", cfg, "--checkpoint", bad, "--out", tmp_path / "o") == 3
    assert run("infer", "--config", cfg, "--checkpoint", tmp_path / "none.bin", "--out", tmp_path / "o") == 3


def test_resume_continues_epochs(trained_runs, tmp_path):
    base, cfg, _ = trained_runs
    out = tmp_path / "r"
    assert run("train", "--config", cfg, "--seed", 7, "--epochs", 2, "--resume",
               base / "run0" / "checkpoint.bin", "--out", out) == 0
    lines = (out / "summary.csv").read_text().strip().split("\n")
    assert len(lines) == 3  # header and two epochs


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "memtrain", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "energy-report" in res.stdout
