import json

import jsonschema
import numpy as np
import pytest

from memtrain.analysis.transfer import (TransferModel, TransferProtocol, inject_transfer_noise,
                                        run_trial, summarize, transfer_eval, write_outputs)
from memtrain.harness.metrics import load_schema
from memtrain.netcore import lenet
from memtrain.trainer import TrainConfig, build_state, run_training

from test_trainer import DEV, TILE, toy_data


def test_zero_sigma_is_identity(rng):
    W = rng.uniform(-1, 1, size=(5, 5))
    np.testing.assert_array_equal(inject_transfer_noise(W, 0.0, 1.0, 16, rng), W)


def test_perturbation_std(rng):
    W = np.zeros(100_000)
    noisy = inject_transfer_noise(W, 0.5, 1.0, 16, rng)
    assert noisy.std() == pytest.approx(0.5 * 2 / 15, rel=0.05)
    assert np.abs(noisy).max() <= 1.0


def test_perturbation_is_clipped(rng):
    noisy = inject_transfer_noise(np.full(1000, 0.99), 3.0, 1.0, 16, rng)
    assert noisy.max() <= 1.0


def test_negative_sigma_rejected(rng):
    with pytest.raises(ValueError):
        inject_transfer_noise(np.zeros(3), -1.0, 1.0, 16, rng)
    with pytest.raises(ValueError):
        TransferProtocol(sigma_prog_levels=[-0.5])


def trained(mode, seed, noise=True):
    cfg = TrainConfig(mode=mode, weight_clip=0.3, batches_per_epoch=20, lr=0.02, test_subset=None,
                      cim_noise=noise, program_noise=noise)
    st = build_state(lenet(), cfg, DEV, TILE, seed)
    run_training(st, toy_data(1280), toy_data(100, 1), max_epochs=1)
    return st


@pytest.fixture(scope="module")
def models():
    return [TransferModel(f"m{k}", "mixed", trained("mixed", k)) for k in range(2)] + \
           [TransferModel("s0", "software", trained("software", 0))]


def test_record_counts(models):
    proto = TransferProtocol(sigma_prog_levels=[0.0, 0.5], noise_samples_per_model=3, seed=1)
    recs = transfer_eval(proto, models, toy_data(40, 2), calib=toy_data(64, 3))
    assert len(recs) == 2 * 3 * len(models)
    for s in (0.0, 0.5):
        assert sum(r.sigma == s for r in recs) == 3 * len(models)


def test_ten_by_ten_gives_hundred_records():
    st = trained("mixed", 0)
    ms = [TransferModel(f"m{k}", "mixed", st) for k in range(10)]
    proto = TransferProtocol(sigma_prog_levels=[0.5], noise_samples_per_model=10)
    recs = transfer_eval(proto, ms, toy_data(8, 2))
    assert len(recs) == 100


def test_zero_sigma_without_read_noise_equals_plain_deploy():
    st = trained("mixed", 0, noise=False)
    m = TransferModel("m", "mixed", st)
    proto = TransferProtocol(sigma_prog_levels=[0.0], noise_samples_per_model=3)
    test = toy_data(60, 2)
    accs = {run_trial(m, test, 0.0, k, 0, proto) for k in range(3)}
    assert len(accs) == 1


def test_parallel_matches_serial(models):
    proto = TransferProtocol(sigma_prog_levels=[0.5], noise_samples_per_model=2, seed=3)
    test = toy_data(30, 2)
    a = transfer_eval(proto, models[:2], test, workers=1)
    b = transfer_eval(proto, models[:2], test, workers=2)
    assert a == b


def test_outputs_validate(models, tmp_path):
    proto = TransferProtocol(sigma_prog_levels=[0.5], noise_samples_per_model=2)
    recs = transfer_eval(proto, models, toy_data(20, 2), calib=toy_data(64, 3))
    raw, summary = write_outputs(recs, tmp_path)
    data = json.loads(summary.read_text())
    jsonschema.validate(data, load_schema("transfer_summary"))
    assert len(raw.read_text().strip().split("\n")) == 1 + len(recs)
    kinds = {g["kind"] for g in summarize(recs)}
    assert kinds == {"mixed", "software"}
    for g in data["groups"]:
        acc = g["accuracy"]
        assert acc["min"] <= acc["q1"] <= acc["median"] <= acc["q3"] <= acc["max"]
