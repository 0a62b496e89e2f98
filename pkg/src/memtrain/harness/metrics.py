"""Deterministic JSON/CSV emission."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    p = Path(path)
    p.write_text(dumps(obj))
    return p


def write_matrix_csv(path, matrix, header=None) -> Path:
    p = Path(path)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.asarray(matrix).tolist():
            w.writerow(row)
    return p


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package for an emitted file (``epoch_stats``, ``infer``, ...)."""
    from importlib.resources import files
    return json.loads(files("memtrain").joinpath("schemas", f"{name}.json").read_text())
