"""CSV artifacts. Floats are written with ``repr`` so files round-trip
exactly and reruns produce identical bytes."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .datagen import ClassCounts, Dataset
from .errors import InvalidSpecError
from .model import Layer, ModelParams


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_dataset(path, dataset: Dataset) -> Path:
    header = ["label"] + [f"f{i}" for i in range(dataset.d)]
    rows = ([int(y)] + list(x) for y, x in zip(dataset.labels, dataset.features))
    return write_rows(path, header, rows)


def load_dataset(path, k: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise InvalidSpecError(f"{path}: expected a 'label' first column")
        data = [row for row in reader if row]
    labels = np.array([int(r[0]) for r in data], dtype=np.int64)
    feats = np.array([[float(v) for v in r[1:]] for r in data], dtype=float)
    return Dataset(feats.reshape(len(data), len(header) - 1), labels,
                   int(labels.max()) + 1 if k is None else k)


def save_counts(path, counts) -> Path:
    return write_rows(path, ["class", "count"], enumerate(np.asarray(counts).tolist()))


def load_counts(path) -> ClassCounts:
    rows = sorted(read_rows(path), key=lambda r: int(r["class"]))
    return ClassCounts([int(r["count"]) for r in rows])


def save_rates(path, rates) -> Path:
    return write_rows(path, ["class", "pi"], enumerate(np.asarray(rates, dtype=float)))


def load_rates(path) -> np.ndarray:
    rows = sorted(read_rows(path), key=lambda r: int(r["class"]))
    return np.array([float(r["pi"]) for r in rows])


def save_checkpoint(path, params: ModelParams) -> Path:
    """One row per scalar: ``name,shape,index,value`` with ``shape`` like ``3x2``."""
    rows = []
    for name, arr in zip(params.names(), params.arrays()):
        shape = "x".join(str(s) for s in arr.shape)
        rows += [(name, shape, i, v) for i, v in enumerate(arr.ravel())]
    return write_rows(path, ["name", "shape", "index", "value"], rows)


def load_checkpoint(path, frozen: bool = False) -> ModelParams:
    tensors: dict[str, tuple[tuple[int, ...], list[float]]] = {}
    for r in read_rows(path):
        shape = tuple(int(s) for s in r["shape"].split("x"))
        tensors.setdefault(r["name"], (shape, []))[1].append(float(r["value"]))
    arr = {name: np.array(vals).reshape(shape) for name, (shape, vals) in tensors.items()}
    n_layers = sum(1 for name in arr if name.startswith("extractor.") and name.endswith(".weight"))
    layers = [Layer(arr[f"extractor.{i}.weight"], arr[f"extractor.{i}.bias"]) for i in range(n_layers)]
    return ModelParams(arr["classifier.weight"], arr["classifier.bias"], layers, frozen)


def save_history(path, history) -> Path:
    return write_rows(path, ["iter", "lr", "loss"],
                      ((r["iter"], r["lr"], r["loss"]) for r in history.records))


def save_meta_history(path, history) -> Path:
    cols = ["iter", "train_loss", "meta_loss", "rate_variance"]
    return write_rows(path, cols, ([r[c] for c in cols] for r in history.meta))


def save_report(path, report) -> Path:
    return write_rows(path, ["metric", "value"], report.rows())


def save_marginal(path, p_y) -> Path:
    return write_rows(path, ["class", "p_y"], enumerate(np.asarray(p_y, dtype=float)))


def save_boundary_grid(path, probe) -> Path:
    gx, gy, lab = probe.points()
    return write_rows(path, ["x", "y", "label"], zip(gx, gy, lab))
