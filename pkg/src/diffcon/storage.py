"""CSV and JSON artefacts: draws, summary curves, metadata sidecars.

Floats are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import ModelParams

FLOAT_FMT = "{:.17g}"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def write_draws_csv(path, draws) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(draws.names)
        for row in draws.array():
            w.writerow([fmt(v) for v in row])


def read_draws_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    return names, np.array(rows, dtype=float).reshape(len(rows), len(names))


def params_from_array(names, values) -> list[ModelParams]:
    n_beta = sum(n.startswith("beta.") for n in names)
    n_eta = sum(n.startswith("eta.") for n in names)
    return [ModelParams.from_flat(v, n_beta, n_eta) for v in values]


def write_band_csv(path, band, grid_name: str) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([grid_name, "lower", "median", "upper"])
        for row in band.rows():
            w.writerow([fmt(v) for v in row])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    return str(x)
