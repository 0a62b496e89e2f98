import os
from pathlib import Path

import numpy as np
import pytest

from memtrain.harness.data import DataError, mnist_split

DATA_ROOT = Path(os.environ.get("MEMTRAIN_DATA", "/root/data"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist():
    try:
        return mnist_split("train", DATA_ROOT), mnist_split("test", DATA_ROOT)
    except DataError as e:
        pytest.skip(f"MNIST not available: {e}")


def write_small_config(path, model="lenet", **sections):
    """A bundled config shrunk for quick runs; ``sections`` maps section -> {key: value}."""
    import configparser

    from memtrain.harness.config import bundled_config

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.read(bundled_config(model))
    small = {
        "data": {"root": str(DATA_ROOT)},
        "trainer": {"batches_per_epoch": "5", "max_epochs": "1", "test_subset": "100"},
        "transfer": {"samples": "2", "calib_images": "64"},
    }
    for sec, kv in list(small.items()) + list(sections.items()):
        for k, v in kv.items():
            cp[sec][k] = str(v)
    with open(path, "w") as fh:
        cp.write(fh)
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_small_config(tmp_path / "small.cfg")


# acceptance criterion -> list of (passed, detail); printed after the run
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}
N_CRITERIA = 10


def record(criterion: int, ok, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in range(1, N_CRITERIA + 1):
        results = ACCEPTANCE.get(c)
        if not results:
            terminalreporter.write_line(f"criterion {c:2d}: NOT RUN")
            continue
        ok = all(r for r, _ in results)
        if len(results) == 1:
            detail = results[0][1]
        else:
            failed = [d for r, d in results if not r]
            detail = f"{len(results) - len(failed)}/{len(results)} checks passed"
            if failed:
                detail += "; failing: " + "; ".join(failed)
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
