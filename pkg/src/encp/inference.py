"""Downstream estimators over a fitted operator.

All estimators share one template: an invariant empirical mean of the target
observable plus a bilinear correction ``u(x)^T E Phi`` where ``Phi`` caches the
invariant empirical expectation of ``v(y) (x) h(y)``.  Empirical means are
orbit-augmented, which makes regression of equivariant observables exactly
equivariant for arbitrary parameter values, not just trained ones.

The quantile pipeline regresses cumulative conditional probabilities over
nested bin prefixes in a single encoder evaluation, repairs monotonicity with
a running-max projection, and inverts by linear search with within-bin
interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groups import FiniteGroup, GroupRepresentation
from .model import FittedOperator

__all__ = [
    "ObservableSamples",
    "EmptyConditioningSetError",
    "invariant_mean",
    "observable_from_callable",
    "observable_from_equivariant_values",
    "observable_from_invariant_values",
    "regress",
    "conditional_probability",
    "conditional_probability_set",
    "ccdf_profile",
    "quantile",
    "quantile_intervals",
    "default_bin_range",
    "symmetry_index",
]


class EmptyConditioningSetError(ValueError):
    """Conditioning set has empirical probability zero on the sample."""


def invariant_mean(fn, xs: np.ndarray, rep: GroupRepresentation) -> np.ndarray:
    """Group-invariant empirical mean ``(1/(|G| N)) sum_g sum_n f(g . x_n)``
    by explicit orbit expansion."""
    xs = np.atleast_2d(xs)
    if xs.shape[0] < 1:
        raise ValueError("empty sample")
    if xs.shape[1] != rep.dim:
        raise ValueError(f"sample dim {xs.shape[1]} != action dim {rep.dim}")
    total = None
    for g in range(rep.group.order):
        vals = np.asarray(fn(xs @ rep.matrices[g].T), dtype=float)
        s = vals.mean(axis=0)
        total = s if total is None else total + s
    return total / rep.group.order


@dataclass(frozen=True)
class ObservableSamples:
    """Observable values on the fitting sample, replicated along group orbits.

    ``values_aug`` has shape ``(|G|, N, dz)`` with ``values_aug[g, n] =
    h(g . y_n)``, which is all the estimators need for orbit-augmented means.
    """

    name: str
    values_aug: np.ndarray
    dim: int

    @property
    def mean(self) -> np.ndarray:
        return self.values_aug.mean(axis=(0, 1))


def observable_from_callable(name, fn, ys: np.ndarray, rep_y: GroupRepresentation):
    """Evaluate ``fn`` on every group transform of the sample."""
    ys = np.atleast_2d(ys)
    vals = []
    for g in range(rep_y.group.order):
        out = np.asarray(fn(ys @ rep_y.matrices[g].T), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        vals.append(out)
    stacked = np.stack(vals)
    return ObservableSamples(name, stacked, stacked.shape[-1])


def observable_from_equivariant_values(
    name, values: np.ndarray, rep_z: GroupRepresentation, group_order: int
):
    """Orbit values of an equivariant observable from its sample values:
    ``h(g . y_n) = rho_Z(g) h(y_n)``."""
    values = np.atleast_2d(values)
    stacked = np.stack([values @ rep_z.matrices[g].T for g in range(group_order)])
    return ObservableSamples(name, stacked, values.shape[1])


def observable_from_invariant_values(name, values: np.ndarray, group_order: int):
    values = np.atleast_2d(values)
    if values.ndim == 1:
        values = values[:, None]
    stacked = np.broadcast_to(values, (group_order, *values.shape)).copy()
    return ObservableSamples(name, stacked, values.shape[1])


def _coefficients(op: FittedOperator, obs: ObservableSamples) -> np.ndarray:
    """Invariant empirical expectation of ``v(y) (x) h(y)``; shape ``(r, dz)``.

    Uses ``v(g . y_n) = D(g) v(y_n)`` so only base features are encoded.
    """
    v = op.features_y(op.ys)  # (N, r)
    n_g = op.group.order
    if obs.values_aug.shape[1] != v.shape[0]:
        raise ValueError("observable sample count does not match the fitting sample")
    acc = np.zeros((op.r, obs.dim))
    for g in range(n_g):
        vg = v @ op.enc_y.iso_rep.matrices[g].T
        acc += vg.T @ obs.values_aug[g]
    return acc / (n_g * v.shape[0])


def regress(op: FittedOperator, obs: ObservableSamples, xs: np.ndarray) -> np.ndarray:
    """Conditional-expectation estimate of the observable at query points."""
    xs = np.asarray(xs, dtype=float)
    squeeze = xs.ndim == 1
    u = op.features_x(np.atleast_2d(xs))
    out = obs.mean + (u @ op.operator()) @ _coefficients(op, obs)
    return out[0] if squeeze else out


def conditional_probability(op: FittedOperator, obs: ObservableSamples, x: np.ndarray) -> float:
    """Raw (unclamped) estimate of ``P(y in B | x)`` for an indicator observable."""
    vals = obs.values_aug
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ValueError("indicator observable must take values in {0, 1}")
    return float(regress(op, obs, np.atleast_2d(x))[0, 0])


def conditional_probability_set(
    op: FittedOperator, obs: ObservableSamples, indicator_a, rep_x: GroupRepresentation
) -> float:
    """Set-conditioned estimate ``P(y in B | x in A)`` (raw value).

    ``indicator_a`` maps a batch of x rows to {0, 1}; both the mass of A and
    the coefficient vector use orbit-augmented empirical means.
    """
    n_g = op.group.order
    u = op.features_x(op.xs)
    mass = 0.0
    coeff = np.zeros(op.r)
    for g in range(n_g):
        ind = np.asarray(indicator_a(op.xs @ rep_x.matrices[g].T), dtype=float).ravel()
        mass += ind.mean()
        ug = u @ op.enc_x.iso_rep.matrices[g].T
        coeff += ug.T @ ind / ind.size
    mass /= n_g
    coeff /= n_g
    if mass <= 0.0:
        raise EmptyConditioningSetError("conditioning set has zero empirical mass")
    correction = coeff @ op.operator() @ _coefficients(op, obs)[:, 0]
    return float(obs.mean[0] + correction / mass)


# ---------------------------------------------------------------------------
# Quantiles via cumulative conditional probabilities
# ---------------------------------------------------------------------------


def default_bin_range(op: FittedOperator, j: int, margin_sigmas: float = 3.0):
    """Per-dimension bin range ``[min - 3 sigma, max + 3 sigma]`` of training y."""
    col = op.ys[:, j]
    s = col.std()
    return float(col.min() - margin_sigmas * s), float(col.max() + margin_sigmas * s)


def _bin_indicator_coefficients(op: FittedOperator, j: int, edges: np.ndarray):
    """Per-bin invariant means and feature coefficients in one pass.

    Returns ``(bin_mass, bin_coeffs)`` with shapes ``(n_bins,)`` and
    ``(r, n_bins)``; prefixes are cumulative sums over bins.
    """
    n_bins = len(edges) - 1
    v = op.features_y(op.ys)
    n_g = op.group.order
    mass = np.zeros(n_bins)
    coeffs = np.zeros((op.r, n_bins))
    for g in range(n_g):
        yj = (op.ys @ op.enc_y.rep_in.matrices[g].T)[:, j]
        idx = np.clip(np.searchsorted(edges, yj, side="right") - 1, -1, n_bins)
        ind = np.zeros((yj.size, n_bins))
        valid = (idx >= 0) & (idx < n_bins)
        ind[np.nonzero(valid)[0], idx[valid]] = 1.0
        mass += ind.mean(axis=0)
        vg = v @ op.enc_y.iso_rep.matrices[g].T
        coeffs += vg.T @ ind / yj.size
    return mass / n_g, coeffs / n_g


def ccdf_profile(
    op: FittedOperator,
    x: np.ndarray,
    j: int,
    n_bins: int = 100,
    bin_range: tuple | None = None,
):
    """Cumulative conditional probabilities over nested bin prefixes at ``x``.

    One encoder evaluation serves all ``n_bins`` regressions.  The raw curve
    is clamped to [0, 1] and repaired to be nondecreasing by a running-max
    projection.  Returns ``(edges, raw, repaired)``.
    """
    if n_bins < 2:
        raise ValueError("need at least two bins")
    if bin_range is None:
        bin_range = default_bin_range(op, j)
    lo, hi = bin_range
    if not lo < hi:
        raise ValueError("empty bin range")
    edges = np.linspace(lo, hi, n_bins + 1)
    mass, coeffs = _bin_indicator_coefficients(op, j, edges)
    u = op.features_x(np.atleast_2d(x))[0]
    per_bin = mass + (u @ op.operator()) @ coeffs
    raw = np.cumsum(per_bin)
    repaired = np.maximum.accumulate(np.clip(raw, 0.0, 1.0))
    return edges, raw, repaired


def quantile(
    op: FittedOperator,
    x: np.ndarray,
    j: int,
    alpha: float,
    n_bins: int = 100,
    bin_range: tuple | None = None,
):
    """Conditional ``alpha``-quantile of ``y_j`` given ``x``.

    Linear search for the first prefix crossing ``alpha`` with within-bin
    linear interpolation.  Returns ``(value, in_range)``; when the crossing
    falls outside the binned range the nearer boundary is returned with
    ``in_range = False``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    edges, _, cdf = ccdf_profile(op, x, j, n_bins=n_bins, bin_range=bin_range)
    in_range = bool(alpha <= cdf[-1])
    return _invert_cdf(edges, cdf, alpha), in_range


def quantile_intervals(
    op: FittedOperator,
    xs: np.ndarray,
    alphas: tuple,
    n_bins: int = 100,
    bin_ranges: list | None = None,
) -> np.ndarray:
    """Per-dimension quantiles for a batch; shape ``(N, q, len(alphas))``."""
    xs = np.atleast_2d(xs)
    q = op.ys.shape[1]
    if bin_ranges is None:
        bin_ranges = [default_bin_range(op, j) for j in range(q)]
    out = np.empty((xs.shape[0], q, len(alphas)))
    for j in range(q):
        edges = np.linspace(bin_ranges[j][0], bin_ranges[j][1], n_bins + 1)
        mass, coeffs = _bin_indicator_coefficients(op, j, edges)
        u = op.features_x(xs)
        per_bin = mass + (u @ op.operator()) @ coeffs  # (N, n_bins)
        cdf = np.maximum.accumulate(np.clip(np.cumsum(per_bin, axis=1), 0.0, 1.0), axis=1)
        for i in range(xs.shape[0]):
            for a_idx, alpha in enumerate(alphas):
                out[i, j, a_idx] = _invert_cdf(edges, cdf[i], alpha)
    return out


def _invert_cdf(edges, cdf, alpha):
    if alpha <= cdf[0]:
        if cdf[0] > 0:
            return float(edges[0] + (alpha / cdf[0]) * (edges[1] - edges[0]))
        return float(edges[0])
    if alpha > cdf[-1]:
        return float(edges[-1])
    k = int(np.searchsorted(cdf, alpha, side="left"))
    prev = cdf[k - 1]
    step = cdf[k] - prev
    frac = 0.0 if step <= 0 else (alpha - prev) / step
    return float(edges[k] + frac * (edges[k + 1] - edges[k]))


# ---------------------------------------------------------------------------
# Symmetry index
# ---------------------------------------------------------------------------


def symmetry_index(
    xs: np.ndarray,
    indicator_a,
    rep_x: GroupRepresentation,
    subset: list | None = None,
) -> float:
    """Monte-Carlo symmetry index of a set: the average normalized overlap of
    the set with its nontrivial group translates.  1 for invariant sets, 0 for
    sets disjoint from every translate."""
    group: FiniteGroup = rep_x.group
    if subset is None:
        subset = list(group.elements())
    if len(subset) < 2:
        raise ValueError("need at least two group elements")
    xs = np.atleast_2d(xs)
    in_a = np.asarray(indicator_a(xs), dtype=float).ravel()
    mass = in_a.mean()
    if mass <= 0:
        raise EmptyConditioningSetError("set A has zero empirical mass")
    total = 0.0
    for g in subset:
        if g == group.identity_index:
            continue
        # x in g.A  <=>  g^{-1}.x in A
        shifted = np.asarray(
            indicator_a(xs @ rep_x.matrices[group.inv(g)].T), dtype=float
        ).ravel()
        total += (in_a * shifted).mean() / mass
    return total / (len(subset) - 1)
