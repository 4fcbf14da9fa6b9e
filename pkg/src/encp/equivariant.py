"""Equivariant MLP encoders with centered features in isotypic coordinates.

Hidden and output layers carry direct sums of the regular representation, so
pointwise nonlinearities commute with the (permutation) group action exactly.
Equivariance of the linear maps is enforced by orthogonal projection of every
weight matrix onto the equivariant subspace; bias vectors are projected onto
the fixed subspace.  The encoder output is centered with the group-invariant
empirical mean and rotated into the isotypic basis, exposing per-irrep feature
blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .groups import (
    FiniteGroup,
    GroupRepresentation,
    IsotypicBasis,
    RealIrrep,
    direct_sum_representation,
    isotypic_decomposition,
    isotypic_representation,
    real_irreps,
    regular_representation,
)
from .nn import MlpParams, forward, init_mlp

__all__ = [
    "EquivariantEncoder",
    "project_equivariant",
    "project_fixed",
    "project_params",
    "make_encoder",
    "encode",
    "refresh_center",
    "invariant_feature_mean",
]


def project_equivariant(
    w: np.ndarray, rep_in: GroupRepresentation, rep_out: GroupRepresentation
) -> np.ndarray:
    """Orthogonal projection of a weight matrix onto the equivariant subspace:
    ``(1/|G|) sum_g rho_out(g)^T w rho_in(g)``.  Idempotent and self-adjoint."""
    if w.shape != (rep_out.dim, rep_in.dim):
        raise ValueError(f"weight shape {w.shape} != ({rep_out.dim}, {rep_in.dim})")
    acc = np.zeros_like(w)
    for g in range(rep_in.group.order):
        acc += rep_out.matrices[g].T @ w @ rep_in.matrices[g]
    return acc / rep_in.group.order


def project_fixed(b: np.ndarray, rep: GroupRepresentation) -> np.ndarray:
    """Projection onto the fixed (trivial isotypic) subspace of ``rep``."""
    return np.einsum("gij,j->i", rep.matrices, b) / rep.group.order


def project_params(params: MlpParams, reps: list) -> MlpParams:
    """Project every layer of an MLP onto its equivariant subspace."""
    layers = []
    for (w, b), rep_in, rep_out in zip(params.layers, reps[:-1], reps[1:]):
        layers.append((project_equivariant(w, rep_in, rep_out), project_fixed(b, rep_out)))
    return MlpParams(layers, params.activation)


@dataclass
class EquivariantEncoder:
    """Frozen backbone description; ``params`` are kept exactly equivariant."""

    group: FiniteGroup
    irreps: list  # RealIrrep list of the group
    rep_in: GroupRepresentation
    layer_reps: list  # reps of every layer space, input first
    params: MlpParams
    iso_basis: IsotypicBasis  # of the output space
    iso_rep: GroupRepresentation  # block-diagonal action on isotypic features
    center: np.ndarray  # invariant empirical mean of backbone outputs (r,)

    @property
    def out_dim(self) -> int:
        return self.layer_reps[-1].dim

    @property
    def blocks(self):
        return self.iso_basis.blocks

    def copy(self) -> "EquivariantEncoder":
        return replace(self, params=self.params.copy(), center=self.center.copy())


def make_encoder(
    group: FiniteGroup,
    rep_in: GroupRepresentation,
    hidden_multiplicities: list,
    out_multiplicity: int,
    activation: str,
    rng: np.random.Generator,
    irreps: list | None = None,
) -> EquivariantEncoder:
    """Build an encoder whose hidden layer ``i`` carries
    ``hidden_multiplicities[i]`` copies of the regular representation and whose
    output carries ``out_multiplicity`` copies (feature dim ``r = mult * |G|``)."""
    if irreps is None:
        irreps = real_irreps(group)
    if out_multiplicity < 1:
        raise ValueError("output must carry at least one copy of the regular representation")
    reg = regular_representation(group)

    def stack(mult):
        return direct_sum_representation(*([reg] * mult)) if mult > 1 else reg

    layer_reps = [rep_in] + [stack(m) for m in hidden_multiplicities] + [stack(out_multiplicity)]
    dims = [rep.dim for rep in layer_reps]
    params = project_params(init_mlp(dims, activation, rng), layer_reps)
    iso_basis = isotypic_decomposition(layer_reps[-1], irreps)
    iso_rep = isotypic_representation(irreps, iso_basis)
    return EquivariantEncoder(
        group=group,
        irreps=irreps,
        rep_in=rep_in,
        layer_reps=layer_reps,
        params=params,
        iso_basis=iso_basis,
        iso_rep=iso_rep,
        center=np.zeros(dims[-1]),
    )


def encode(enc: EquivariantEncoder, xs: np.ndarray) -> np.ndarray:
    """Centered features in isotypic coordinates, ``(N, r)`` for row input."""
    xs = np.asarray(xs, dtype=float)
    squeeze = xs.ndim == 1
    z = forward(enc.params, np.atleast_2d(xs))
    u = (z - enc.center) @ enc.iso_basis.q.T
    return u[0] if squeeze else u


def invariant_feature_mean(enc: EquivariantEncoder, xs: np.ndarray) -> np.ndarray:
    """Group-invariant empirical mean of backbone outputs.

    Equivariance of the backbone turns the orbit average over inputs into the
    group average of the plain output mean, which lies in the fixed subspace;
    centering by it preserves exact equivariance of the features.
    """
    z_bar = forward(enc.params, np.atleast_2d(xs)).mean(axis=0)
    return project_fixed(z_bar, enc.layer_reps[-1])


def refresh_center(enc: EquivariantEncoder, xs: np.ndarray) -> None:
    enc.center = invariant_feature_mean(enc, xs)
