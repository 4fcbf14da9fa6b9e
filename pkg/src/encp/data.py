"""Paired-sample dataset container and CSV round-trip helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "write_dataset", "read_dataset"]


@dataclass(frozen=True)
class Dataset:
    """I.i.d. draws ``(x_n, y_n)`` with generator provenance."""

    x: np.ndarray  # (N, p)
    y: np.ndarray  # (N, q)
    seed: int
    spec_digest: str

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"bad dataset shapes {self.x.shape}, {self.y.shape}")
        if self.x.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.seed, self.spec_digest)


def write_dataset(dataset: Dataset, out_dir, meta: dict | None = None) -> Path:
    """Write ``data.csv`` (full float64 precision) plus a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p, q = dataset.x.shape[1], dataset.y.shape[1]
    cols = [f"x_{i}" for i in range(p)] + [f"y_{j}" for j in range(q)]
    table = np.concatenate([dataset.x, dataset.y], axis=1)
    csv_path = out_dir / "data.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    sidecar = {
        "p": p,
        "q": q,
        "n": dataset.n,
        "seed": dataset.seed,
        "spec_digest": dataset.spec_digest,
    }
    if meta:
        sidecar.update(meta)
    with open(out_dir / "data.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return csv_path


def read_dataset(data_dir) -> tuple[Dataset, dict]:
    """Read a dataset directory written by :func:`write_dataset`."""
    data_dir = Path(data_dir)
    with open(data_dir / "data.json") as fh:
        meta = json.load(fh)
    table = np.loadtxt(data_dir / "data.csv", delimiter=",", skiprows=1, ndmin=2)
    p, q = meta["p"], meta["q"]
    ds = Dataset(table[:, :p], table[:, p : p + q], meta.get("seed", 0), meta.get("spec_digest", ""))
    return ds, meta
