"""Symmetric conditional Gaussian mixtures with analytic densities.

A base set of ``n_g`` Gaussians over ``Z = X (+) Y`` (block-diagonal
covariances) is replicated along group orbits, producing ``|G| * n_g``
components with uniform weights.  By construction the marginals are exactly
invariant and the joint is exactly invariant under the diagonal action, which
yields closed forms for the density ratio ``kappa = p_xy / (p_x p_y)``, the
conditional mean, and per-dimension conditional CDFs.  All densities are
evaluated in log-space with log-sum-exp.

Also home to the two-moons style uncertainty benchmark generator, whose
response distribution is reflection symmetric in its first coordinate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .data import Dataset
from .groups import (
    FiniteGroup,
    GroupRepresentation,
    direct_sum_representation,
    real_irreps,
    trivial_representation,
)
from .rng import stream

__all__ = [
    "SymmetricGmmSpec",
    "MoonsBenchmarkSpec",
    "natural_representation",
    "build_spec",
    "sample",
    "log_marginal_x",
    "log_marginal_y",
    "log_joint",
    "pmd_ratio",
    "log_pmd_ratio",
    "conditional_mean",
    "conditional_cdf",
    "conditional_quantile",
    "grid_mass_estimate",
    "conditional_cdf_mc",
    "pmd_ratio_grid",
    "sample_moons",
    "moons_group_actions",
]


def _chol_cache(covs: np.ndarray):
    """Cholesky factors and Gaussian log-normalizers for a component stack."""
    chols = np.linalg.cholesky(covs)
    dim = covs.shape[-1]
    half_logdets = np.log(np.einsum("cii->ci", chols)).sum(axis=1)
    log_norm = -0.5 * dim * np.log(2.0 * np.pi) - half_logdets
    return chols, log_norm


def _log_gauss(points: np.ndarray, means: np.ndarray, chols: np.ndarray, log_norm: np.ndarray):
    """Per-component Gaussian log densities, shape (N, C)."""
    diff = points[:, None, :] - means[None, :, :]  # (N, C, d)
    sol = np.linalg.solve(chols, diff.transpose(1, 2, 0))  # (C, d, N)
    quad = np.einsum("cdn,cdn->cn", sol, sol)
    return (log_norm[:, None] - 0.5 * quad).T


@dataclass(frozen=True)
class SymmetricGmmSpec:
    """Group-orbit Gaussian mixture over ``X x Y``.

    ``means_x/means_y/covs_x/covs_y`` hold the orbit-expanded component
    parameters (``|G| * n_g`` components, uniform weights).
    """

    group: FiniteGroup
    rep_x: GroupRepresentation
    rep_y: GroupRepresentation
    base_means: np.ndarray  # (n_g, p+q)
    base_covs_x: np.ndarray  # (n_g, p, p)
    base_covs_y: np.ndarray  # (n_g, q, q)
    means_x: np.ndarray  # (C, p)
    means_y: np.ndarray  # (C, q)
    covs_x: np.ndarray  # (C, p, p)
    covs_y: np.ndarray  # (C, q, q)
    digest: str

    @property
    def p(self) -> int:
        return self.rep_x.dim

    @property
    def q(self) -> int:
        return self.rep_y.dim

    @property
    def n_components(self) -> int:
        return self.means_x.shape[0]

    @property
    def log_weight(self) -> float:
        return -np.log(self.n_components)

    def caches(self):
        cx = _chol_cache(self.covs_x)
        cy = _chol_cache(self.covs_y)
        return cx, cy


def natural_representation(group: FiniteGroup, dim: int) -> GroupRepresentation:
    """Canonical orthogonal action of ``group`` on ``R^dim``.

    Non-trivial irreps are stacked round-robin while they fit; leftover
    dimensions carry the trivial action.  For C2 and one dimension this is the
    sign flip ``x -> -x``.
    """
    irreps = real_irreps(group)
    nontrivial = [ir for ir in irreps if not ir.is_trivial]
    picked = []
    remaining = dim
    while remaining > 0 and nontrivial:
        progressed = False
        for ir in nontrivial:
            if ir.dim <= remaining:
                picked.append(GroupRepresentation(group, ir.dim, ir.matrices))
                remaining -= ir.dim
                progressed = True
            if remaining == 0:
                break
        if not progressed:
            break
    if remaining > 0:
        picked.append(trivial_representation(group, remaining))
    return direct_sum_representation(*picked) if len(picked) > 1 else picked[0]


def _spec_digest(group, rep_x, rep_y, base_means, base_covs_x, base_covs_y) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(group.label.encode())
    for arr in (rep_x.matrices, rep_y.matrices, base_means, base_covs_x, base_covs_y):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def build_spec(
    group: FiniteGroup,
    rep_x: GroupRepresentation,
    rep_y: GroupRepresentation,
    n_g: int,
    seed: int,
    mean_scale: float = 2.0,
    cov_jitter: float = 0.05,
) -> SymmetricGmmSpec:
    """Draw a random symmetric mixture: means ~ Unif(-scale, scale), covariance
    blocks ``A A^T + jitter * I`` with ``A`` entries ``N(0, 1)/sqrt(dim)``."""
    if rep_x.group.order != group.order or rep_y.group.order != group.order:
        raise ValueError("representations must belong to the given group")
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    p, q = rep_x.dim, rep_y.dim
    rng = stream(seed, "gmm-spec")
    base_means = rng.uniform(-mean_scale, mean_scale, size=(n_g, p + q))

    def draw_cov(dim):
        a = rng.standard_normal((n_g, dim, dim)) / np.sqrt(dim)
        return a @ a.transpose(0, 2, 1) + cov_jitter * np.eye(dim)

    base_covs_x = draw_cov(p)
    base_covs_y = draw_cov(q)
    means_x, means_y, covs_x, covs_y = [], [], [], []
    for g in group.elements():
        rx = rep_x.matrices[g]
        ry = rep_y.matrices[g]
        for c in range(n_g):
            means_x.append(rx @ base_means[c, :p])
            means_y.append(ry @ base_means[c, p:])
            covs_x.append(rx @ base_covs_x[c] @ rx.T)
            covs_y.append(ry @ base_covs_y[c] @ ry.T)
    digest = _spec_digest(group, rep_x, rep_y, base_means, base_covs_x, base_covs_y)
    spec = SymmetricGmmSpec(
        group,
        rep_x,
        rep_y,
        base_means,
        base_covs_x,
        base_covs_y,
        np.array(means_x),
        np.array(means_y),
        np.array(covs_x),
        np.array(covs_y),
        digest,
    )
    eig_x = np.linalg.eigvalsh(spec.covs_x).min()
    eig_y = np.linalg.eigvalsh(spec.covs_y).min()
    if min(eig_x, eig_y) < 1e-6:
        raise ValueError(f"degenerate covariance block: min eigenvalue {min(eig_x, eig_y)}")
    return spec


def sample(spec: SymmetricGmmSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. samples: uniform component index, then Gaussian draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, f"gmm-sample:{spec.digest}")
    comp = rng.integers(0, spec.n_components, size=n)
    (chol_x, _), (chol_y, _) = spec.caches()
    zx = rng.standard_normal((n, spec.p))
    zy = rng.standard_normal((n, spec.q))
    x = spec.means_x[comp] + np.einsum("nij,nj->ni", chol_x[comp], zx)
    y = spec.means_y[comp] + np.einsum("nij,nj->ni", chol_y[comp], zy)
    return Dataset(x, y, seed, spec.digest)


def _component_logs_x(spec, xs):
    chols, log_norm = _chol_cache(spec.covs_x)
    return _log_gauss(np.atleast_2d(xs), spec.means_x, chols, log_norm)


def _component_logs_y(spec, ys):
    chols, log_norm = _chol_cache(spec.covs_y)
    return _log_gauss(np.atleast_2d(ys), spec.means_y, chols, log_norm)


def log_marginal_x(spec: SymmetricGmmSpec, xs: np.ndarray) -> np.ndarray:
    return logsumexp(_component_logs_x(spec, xs) + spec.log_weight, axis=1)


def log_marginal_y(spec: SymmetricGmmSpec, ys: np.ndarray) -> np.ndarray:
    return logsumexp(_component_logs_y(spec, ys) + spec.log_weight, axis=1)


def log_joint(spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    lx = _component_logs_x(spec, xs)
    ly = _component_logs_y(spec, ys)
    return logsumexp(lx + ly + spec.log_weight, axis=1)


def log_pmd_ratio(spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``log kappa`` for paired rows of ``xs`` and ``ys``."""
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    return log_joint(spec, xs, ys) - log_marginal_x(spec, xs) - log_marginal_y(spec, ys)


def pmd_ratio(spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Density ratio ``kappa(x, y) = p_xy / (p_x p_y)`` for paired rows."""
    out = np.exp(log_pmd_ratio(spec, xs, ys))
    return out if out.size > 1 else float(out[0])


def pmd_ratio_grid(spec: SymmetricGmmSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``kappa`` on the full grid ``xs x ys``; shape (len(xs), len(ys))."""
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    lx = _component_logs_x(spec, xs)  # (Nx, C)
    ly = _component_logs_y(spec, ys)  # (Ny, C)
    joint = logsumexp(lx[:, None, :] + ly[None, :, :] + spec.log_weight, axis=2)
    mx = logsumexp(lx + spec.log_weight, axis=1)
    my = logsumexp(ly + spec.log_weight, axis=1)
    return np.exp(joint - mx[:, None] - my[None, :])


def _posterior_weights(spec, xs):
    logs = _component_logs_x(spec, xs) + spec.log_weight
    return np.exp(logs - logsumexp(logs, axis=1, keepdims=True))


def conditional_mean(spec: SymmetricGmmSpec, xs: np.ndarray) -> np.ndarray:
    """Analytic ``E[y | x]``; within a component ``y`` is independent of ``x``
    thanks to the block covariance, so the mean is posterior-weighted."""
    squeeze = np.asarray(xs).ndim == 1
    w = _posterior_weights(spec, xs)
    out = w @ spec.means_y
    return out[0] if squeeze else out


def conditional_cdf(spec: SymmetricGmmSpec, x: np.ndarray, j: int, t) -> np.ndarray:
    """``P(y_j <= t | x)`` via posterior-weighted Gaussian CDFs."""
    if not 0 <= j < spec.q:
        raise ValueError(f"dimension {j} outside 0..{spec.q - 1}")
    w = _posterior_weights(spec, x)[0]
    mu = spec.means_y[:, j]
    sigma = np.sqrt(spec.covs_y[:, j, j])
    t = np.asarray(t, dtype=float)
    z = (t[..., None] - mu) / sigma
    vals = ndtr(z) @ w
    return float(vals) if vals.ndim == 0 else vals


def conditional_quantile(spec: SymmetricGmmSpec, x: np.ndarray, j: int, alpha: float) -> float:
    """Inverse of :func:`conditional_cdf` by bisection (oracle helper)."""
    lo = float((spec.means_y[:, j] - 12 * np.sqrt(spec.covs_y[:, j, j])).min())
    hi = float((spec.means_y[:, j] + 12 * np.sqrt(spec.covs_y[:, j, j])).max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if conditional_cdf(spec, x, j, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def grid_mass_estimate(spec: SymmetricGmmSpec, m: int, seed: int):
    """Monte-Carlo check of ``E_x E_y kappa = 1`` on an ``m x m`` independent
    grid; returns ``(estimate, standard_error)`` with the standard error from
    the dominant row/column mean variation plus the per-pair term."""
    xs = sample(spec, m, seed).x
    ys = sample(spec, m, seed + 1).y
    grid = pmd_ratio_grid(spec, xs, ys)
    est = float(grid.mean())
    var_rows = grid.mean(axis=1).var(ddof=1)
    var_cols = grid.mean(axis=0).var(ddof=1)
    var_pairs = grid.var(ddof=1)
    se = float(np.sqrt(var_rows / m + var_cols / m + var_pairs / (m * m)))
    return est, se


# ---------------------------------------------------------------------------
# Moons-style uncertainty benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoonsBenchmarkSpec:
    """Latent construction for the reflection-symmetric moons response."""

    beta: float = 1.0
    x_range: tuple = (0.8, 3.2)
    z_range: tuple = (-np.pi, np.pi)
    phi_range: tuple = (0.0, 2.0 * np.pi)
    r_range: tuple = (-0.1, 0.1)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def digest(self) -> str:
        blob = json.dumps(
            [self.beta, self.x_range, self.z_range, self.phi_range, self.r_range]
        ).encode()
        return hashlib.blake2b(blob, digest_size=16).hexdigest()


def _moons_latents(spec: MoonsBenchmarkSpec, n: int, seed: int):
    rng = stream(seed, f"moons:{spec.digest}")
    x = rng.uniform(*spec.x_range, size=n)
    z = rng.uniform(*spec.z_range, size=n)
    phi = rng.uniform(*spec.phi_range, size=n)
    r = rng.uniform(*spec.r_range, size=n)
    return x, z, phi, r


def sample_moons(spec: MoonsBenchmarkSpec, n: int, seed: int) -> Dataset:
    """Uniform covariate with a bivariate response whose first coordinate is
    reflection symmetric: ``y0 = z/(beta x) + r cos(phi)``,
    ``y1 = (1 - cos z)/2 + r sin(phi) + sin x``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x, z, phi, r = _moons_latents(spec, n, seed)
    y0 = z / (spec.beta * x) + r * np.cos(phi)
    y1 = 0.5 * (1.0 - np.cos(z)) + r * np.sin(phi) + np.sin(x)
    return Dataset(x[:, None], np.stack([y0, y1], axis=1), seed, spec.digest)


def moons_group_actions():
    """The C2 reflection prior of the moons benchmark: trivial on the
    covariate, ``(y0, y1) -> (-y0, y1)`` on the response."""
    from .groups import cyclic

    group = cyclic(2)
    rep_x = trivial_representation(group, 1)
    mats = np.stack([np.eye(2), np.diag([-1.0, 1.0])])
    rep_y = GroupRepresentation(group, 2, mats)
    return group, rep_x, rep_y


def conditional_cdf_mc(
    spec: SymmetricGmmSpec, x: np.ndarray, j: int, t: float, draws: int, seed: int
):
    """Monte-Carlo oracle for the conditional CDF: sample components by
    posterior weight, then Gaussian draws.  Returns ``(estimate, se)``."""
    rng = stream(seed, "cdf-mc")
    w = _posterior_weights(spec, x)[0]
    comp = rng.choice(spec.n_components, size=draws, p=w)
    mu = spec.means_y[comp, j]
    sigma = np.sqrt(spec.covs_y[comp, j, j])
    ys = mu + sigma * rng.standard_normal(draws)
    hits = (ys <= t).mean()
    se = np.sqrt(max(hits * (1 - hits), 1e-12) / draws)
    return float(hits), float(se)
