"""Evaluation metrics: density-ratio MSE, invariance error, regression MSE,
and interval coverage statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gmm import SymmetricGmmSpec, pmd_ratio_grid
from .groups import GroupRepresentation

__all__ = [
    "EvalReport",
    "pmd_mse",
    "pmd_mse_kernel",
    "invariance_error",
    "regression_mse",
    "coverage_metrics",
]


@dataclass
class EvalReport:
    """Metric bundle written by the experiment runner."""

    pmd_mse: float | None = None
    invariance_error: float | None = None
    regression_mse: float | None = None
    coverage: float | None = None
    relaxed_coverage: float | None = None
    mean_set_size: float | None = None
    n_train: int | None = None
    n_test: int | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("pmd_mse", "invariance_error", "regression_mse", "mean_set_size"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        for name in ("coverage", "relaxed_coverage"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in (
                "pmd_mse",
                "invariance_error",
                "regression_mse",
                "coverage",
                "relaxed_coverage",
                "mean_set_size",
                "n_train",
                "n_test",
                "seed",
            )
        }
        out.update(self.extra)
        return out

    def write(self, path) -> None:
        self.validate()
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def pmd_mse_kernel(
    kernel_grid_fn, spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray, cap: int = 1024
) -> float:
    """Mean squared error between a kernel and the analytic density ratio over
    the full independent-pairs grid (marginal pairs by index pairing)."""
    m = min(len(xs), len(ys), cap)
    xs, ys = xs[:m], ys[:m]
    k_true = pmd_ratio_grid(spec, xs, ys)
    k_model = kernel_grid_fn(xs, ys)
    return float(((k_true - k_model) ** 2).mean())


def pmd_mse(model_or_op, spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray, cap: int = 1024):
    from .model import EncpModel, FittedOperator, kernel_grid

    if isinstance(model_or_op, EncpModel):
        fn = lambda a, b: kernel_grid(model_or_op, a, b)
    elif isinstance(model_or_op, FittedOperator):
        fn = lambda a, b: 1.0 + (model_or_op.features_x(a) @ model_or_op.operator()) @ model_or_op.features_y(b).T
    else:
        fn = model_or_op
    return pmd_mse_kernel(fn, spec, xs, ys, cap=cap)


def invariance_error(
    kernel_pairs_fn,
    xs: np.ndarray,
    ys: np.ndarray,
    rep_x: GroupRepresentation,
    rep_y: GroupRepresentation,
) -> float:
    """Mean over samples and nontrivial elements of
    ``(kappa(g.x, g.y) - kappa(x, y))^2``; zero for the trivial group."""
    group = rep_x.group
    base = np.asarray(kernel_pairs_fn(xs, ys), dtype=float)
    total = 0.0
    count = 0
    for g in group.elements():
        if g == group.identity_index:
            continue
        moved = np.asarray(
            kernel_pairs_fn(xs @ rep_x.matrices[g].T, ys @ rep_y.matrices[g].T), dtype=float
        )
        total += float(((moved - base) ** 2).mean())
        count += 1
    return total / count if count else 0.0


def regression_mse(predicted: np.ndarray, target: np.ndarray) -> float:
    predicted = np.atleast_2d(predicted)
    target = np.atleast_2d(target)
    return float(((predicted - target) ** 2).sum(axis=1).mean())


def coverage_metrics(intervals: np.ndarray, test_y: np.ndarray):
    """Coverage statistics for per-dimension intervals.

    ``intervals`` has shape ``(N, q, 2)`` with lower/upper bounds per test
    point and dimension.  Returns ``(coverage, relaxed_coverage,
    mean_set_size)``: the fraction of points with every dimension inside its
    interval, the product of per-dimension marginal coverages, and the mean
    product of interval widths.
    """
    intervals = np.asarray(intervals, dtype=float)
    test_y = np.atleast_2d(test_y)
    if intervals.ndim != 3 or intervals.shape[2] != 2 or intervals.shape[:2] != test_y.shape:
        raise ValueError(f"interval shape {intervals.shape} does not match y {test_y.shape}")
    lo, hi = intervals[..., 0], intervals[..., 1]
    if not np.isfinite(intervals).all():
        raise ValueError("interval bounds must be finite")
    if np.any(lo > hi):
        raise ValueError("lower bounds exceed upper bounds")
    inside = (test_y >= lo) & (test_y <= hi)
    coverage = float(inside.all(axis=1).mean())
    relaxed = float(np.prod(inside.mean(axis=0)))
    set_size = float(np.prod(hi - lo, axis=1).mean())
    return coverage, relaxed, set_size
