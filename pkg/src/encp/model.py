"""Bilinear invariant-kernel model, its contrastive loss, and training.

The kernel is ``kappa(x, y) = 1 + sum_k <u_k(x), (O_k kron I_dk) v_k(y)>``
over the isotypic feature blocks of two equivariant encoders, with one
trainable ``m_k x m_k`` matrix per block.  Invariance of ``kappa`` under the
diagonal group action holds structurally for any parameter values.

The loss combines, per block, an unbiased U-statistic estimate of the
operator-approximation objective with an unbiased deviation-from-identity
covariance penalty (two-sample split via an in-batch permutation, features
orbit-augmented), plus a centering penalty on the invariant feature blocks.
With the trivial group this reduces exactly to the symmetry-agnostic model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .equivariant import (
    EquivariantEncoder,
    encode,
    invariant_feature_mean,
    project_equivariant,
    project_fixed,
)
from .nn import AdamState, adam_init, adam_step, forward, forward_backward
from .rng import stream

logger = logging.getLogger(__name__)

__all__ = [
    "EncpModel",
    "TrainConfig",
    "TrainHistory",
    "LossValue",
    "TrainingDivergedError",
    "init_blocks",
    "operator_matrix",
    "kernel_features",
    "kernel_pairs",
    "kernel_grid",
    "kernel_eval",
    "empirical_loss",
    "train",
    "FittedOperator",
    "fit_statistics",
]


class TrainingDivergedError(RuntimeError):
    """Non-finite loss; carries the offending epoch/batch diagnostics."""


@dataclass
class EncpModel:
    """Two equivariant encoders plus one trainable matrix per isotypic block."""

    enc_x: EquivariantEncoder
    enc_y: EquivariantEncoder
    blocks: list  # O_k arrays, shape (m_k, m_k)

    def __post_init__(self):
        bx, by = self.enc_x.blocks, self.enc_y.blocks
        if len(bx) != len(by) or any(
            (a.irrep_id, a.multiplicity, a.dim) != (b.irrep_id, b.multiplicity, b.dim)
            for a, b in zip(bx, by)
        ):
            raise ValueError("encoders must share the same isotypic block structure")
        if len(self.blocks) != len(bx):
            raise ValueError("need exactly one operator block per isotypic type")
        for o, blk in zip(self.blocks, bx):
            if o.shape != (blk.multiplicity, blk.multiplicity):
                raise ValueError(
                    f"block {blk.irrep_id}: shape {o.shape} != ({blk.multiplicity},) * 2"
                )

    @property
    def r(self) -> int:
        return self.enc_x.out_dim

    def copy(self) -> "EncpModel":
        return EncpModel(self.enc_x.copy(), self.enc_y.copy(), [o.copy() for o in self.blocks])


def init_blocks(enc: EquivariantEncoder, rng: np.random.Generator, scale: float = 0.2) -> list:
    return [scale * rng.standard_normal((b.multiplicity, b.multiplicity)) for b in enc.blocks]


def operator_matrix(model: EncpModel) -> np.ndarray:
    """Dense ``r x r`` operator: direct sum of ``O_k kron I_dk``."""
    r = model.r
    out = np.zeros((r, r))
    for o, blk in zip(model.blocks, model.enc_x.blocks):
        out[blk.rows, blk.rows] = np.kron(o, np.eye(blk.dim))
    return out


def _block_views(enc: EquivariantEncoder, feats: np.ndarray) -> list:
    n = feats.shape[0]
    return [
        feats[:, blk.rows].reshape(n, blk.multiplicity, blk.dim) for blk in enc.blocks
    ]


def kernel_features(model: EncpModel, xs: np.ndarray, ys: np.ndarray):
    return encode(model.enc_x, np.atleast_2d(xs)), encode(model.enc_y, np.atleast_2d(ys))


def kernel_pairs(model: EncpModel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``kappa`` for paired rows of ``xs`` and ``ys``."""
    u, v = kernel_features(model, xs, ys)
    e = operator_matrix(model)
    return 1.0 + np.einsum("nr,rs,ns->n", u, e, v)


def kernel_grid(model: EncpModel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``kappa`` on the full grid; shape ``(len(xs), len(ys))``."""
    u, v = kernel_features(model, xs, ys)
    return 1.0 + (u @ operator_matrix(model)) @ v.T


def kernel_eval(model: EncpModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(kernel_pairs(model, x, y)[0])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass
class LossValue:
    total: float
    l0: float
    per_block: list  # dicts: irrep_id, joint, pair, omega
    centering: float
    grad_u: np.ndarray | None = None  # (N, r)
    grad_v: np.ndarray | None = None
    grad_blocks: list | None = None


def _augmented(feats_block: np.ndarray, irrep_mats: np.ndarray) -> np.ndarray:
    """Stack group-transformed copies; (N, m, d) -> (|G| * N, m * d), g-major."""
    n, m, d = feats_block.shape
    n_g = irrep_mats.shape[0]
    out = np.empty((n_g, n, m, d))
    for g in range(n_g):
        out[g] = feats_block @ irrep_mats[g].T
    return out.reshape(n_g * n, m * d)


def _scatter_augmented_grad(grad_flat: np.ndarray, irrep_mats: np.ndarray, n: int, m: int, d: int):
    """Adjoint of :func:`_augmented`: route gradients back to the base features."""
    n_g = irrep_mats.shape[0]
    grads = grad_flat.reshape(n_g, n, m, d)
    acc = np.zeros((n, m, d))
    for g in range(n_g):
        acc += grads[g] @ irrep_mats[g]
    return acc


def empirical_loss(
    model: EncpModel,
    xs: np.ndarray,
    ys: np.ndarray,
    gamma: float,
    perm: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    with_grads: bool = True,
) -> LossValue:
    """Disentangled contrastive loss on one batch, with exact feature gradients.

    ``perm`` (or ``rng`` to draw one) selects the second sample of the
    two-sample covariance estimator.  Gradients are returned with respect to
    the isotypic features and the operator blocks; chaining into encoder
    parameters is done by the training loop.
    """
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    n = xs.shape[0]
    if n < 4:
        raise ValueError(f"batch size {n} < 4")
    if perm is None:
        if rng is None:
            raise ValueError("provide either perm or rng for the covariance split")
        perm = rng.permutation(n)
    u = encode(model.enc_x, xs)
    v = encode(model.enc_y, ys)
    u_blocks = _block_views(model.enc_x, u)
    v_blocks = _block_views(model.enc_y, v)
    irreps = {ir.id: ir for ir in model.enc_x.irreps}

    grad_u = np.zeros_like(u) if with_grads else None
    grad_v = np.zeros_like(v) if with_grads else None
    grad_blocks = [] if with_grads else None

    total = 0.0
    l0 = 0.0
    per_block = []
    pair_scale = 1.0 / (n * (n - 1))
    for o, blk, ub, vb in zip(model.blocks, model.enc_x.blocks, u_blocks, v_blocks):
        m, d = blk.multiplicity, blk.dim
        uo = np.tensordot(ub, o, axes=([1], [0])).transpose(0, 2, 1).reshape(n, m * d)
        vf = vb.reshape(n, m * d)
        k_mat = uo @ vf.T  # k_mat[a, b] = kappa_blk(x_a, y_b)
        diag = np.einsum("nn->n", k_mat)
        joint = -2.0 / n * diag.sum()
        off_sq = (k_mat**2).sum() - (diag**2).sum()
        pair = pair_scale * off_sq

        mats = irreps[blk.irrep_id].matrices
        f1u = _augmented(ub, mats)
        f2u = _augmented(ub[perm], mats)
        f1v = _augmented(vb, mats)
        f2v = _augmented(vb[perm], mats)
        n_aug = f1u.shape[0]
        g_u = f1u @ f2u.T
        g_v = f1v @ f2v.T
        c2_u = (g_u**2).sum() / n_aug**2
        c2_v = (g_v**2).sum() / n_aug**2
        tr_u = (ub**2).sum() / n
        tr_v = (vb**2).sum() / n
        r_k = m * d
        omega = (c2_u - 2 * tr_u + r_k) + (c2_v - 2 * tr_v + r_k)

        total += joint + pair + gamma * omega
        l0 += joint + pair
        per_block.append(
            {"irrep_id": blk.irrep_id, "joint": joint, "pair": pair, "omega": omega}
        )

        if with_grads:
            w = (2.0 * pair_scale) * k_mat
            np.einsum("nn->n", w)[:] = 0.0
            vo = np.tensordot(vb, o, axes=([1], [1])).transpose(0, 2, 1)  # (n, s, d)
            dub = -2.0 / n * vo
            dvb = -2.0 / n * np.tensordot(ub, o, axes=([1], [0])).transpose(0, 2, 1)
            dub += (w @ vo.reshape(n, m * d)).reshape(n, m, d)
            dvb += (w.T @ uo).reshape(n, m, d)
            us = ub.transpose(1, 0, 2).reshape(m, n * d)
            vs = vb.transpose(1, 0, 2).reshape(m, n * d)
            d_o = -2.0 / n * (us @ vs.T)
            for j in range(d):
                d_o += ub[:, :, j].T @ (w @ vb[:, :, j])

            scale = 2.0 / n_aug**2
            df1u = scale * (g_u @ f2u)
            df2u = scale * (g_u.T @ f1u)
            df1v = scale * (g_v @ f2v)
            df2v = scale * (g_v.T @ f1v)
            omega_du = _scatter_augmented_grad(df1u, mats, n, m, d)
            omega_du_perm = _scatter_augmented_grad(df2u, mats, n, m, d)
            omega_du[perm] += omega_du_perm
            omega_du += (-4.0 / n) * ub
            omega_dv = _scatter_augmented_grad(df1v, mats, n, m, d)
            omega_dv_perm = _scatter_augmented_grad(df2v, mats, n, m, d)
            omega_dv[perm] += omega_dv_perm
            omega_dv += (-4.0 / n) * vb

            dub += gamma * omega_du
            dvb += gamma * omega_dv
            grad_u[:, blk.rows] += dub.reshape(n, m * d)
            grad_v[:, blk.rows] += dvb.reshape(n, m * d)
            grad_blocks.append(d_o)

    triv_u = u_blocks[0].reshape(n, -1)
    triv_v = v_blocks[0].reshape(n, -1)
    mean_u = triv_u.mean(axis=0)
    mean_v = triv_v.mean(axis=0)
    centering = 2.0 * gamma * (float(mean_u @ mean_u) + float(mean_v @ mean_v))
    total += centering
    if with_grads:
        blk0 = model.enc_x.blocks[0]
        grad_u[:, blk0.rows] += (4.0 * gamma / n) * mean_u
        grad_v[:, model.enc_y.blocks[0].rows] += (4.0 * gamma / n) * mean_v

    return LossValue(total, l0, per_block, centering, grad_u, grad_v, grad_blocks)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    r: int
    gamma: float = 1e-2
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    hidden_widths: tuple = (32, 32)
    activation: str = "tanh"

    def validate(self, group_order: int) -> None:
        if self.r % group_order != 0 or self.r < group_order:
            raise ValueError(f"latent dim {self.r} must be a positive multiple of |G|={group_order}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.batch_size < 4:
            raise ValueError("batch size must be >= 4")
        for w in self.hidden_widths:
            if w % group_order != 0:
                raise ValueError(f"hidden width {w} not a multiple of |G|={group_order}")


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # per-epoch record dicts
    best_epoch: int | None = None

    def summary(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
        }

    def comparable(self) -> list:
        """History with timing fields removed, for determinism checks."""
        return [{k: v for k, v in rec.items() if k != "wall_time"} for rec in self.epochs]


def _param_step(params, grads, state, reps):
    grads = [
        (project_equivariant(gw, rin, rout), project_fixed(gb, rout))
        for (gw, gb), rin, rout in zip(grads, reps[:-1], reps[1:])
    ]
    params, state = adam_step(state, params, grads)
    from .equivariant import project_params

    return project_params(params, reps), state


def _blocks_step(blocks, grads, state):
    fake_params_layers = [(o, np.zeros(0)) for o in blocks]
    fake_grads = [(g, np.zeros(0)) for g in grads]
    from .nn import MlpParams

    new_params, state = adam_step(state, MlpParams(fake_params_layers, "identity"), fake_grads)
    return [w for w, _ in new_params.layers], state


def _chain_to_params(enc: EquivariantEncoder, xs: np.ndarray, grad_feats: np.ndarray):
    """Backprop feature gradients through the isotypic rotation and backbone."""
    upstream = grad_feats @ enc.iso_basis.q  # u = (z - mu) @ Q^T
    _, grads, _ = forward_backward(enc.params, xs, upstream)
    return grads


def train(
    model: EncpModel,
    dataset: Dataset,
    config: TrainConfig,
    val: Dataset | None = None,
):
    """Adam minimization over shuffled mini-batches; deterministic per seed.

    Weights are re-projected onto the equivariant subspace after every update
    and centering statistics are refreshed at each epoch start.  When ``val``
    is given, the returned model carries the parameters with the best
    validation loss; otherwise the final parameters.
    """
    config.validate(model.enc_x.group.order)
    model = model.copy()
    xs, ys = dataset.x, dataset.y
    n = dataset.n
    shuffle_rng = stream(config.seed, "train-shuffle")
    perm_rng = stream(config.seed, "train-ustat-perm")
    val_perm = stream(config.seed, "val-ustat-perm").permutation(val.n) if val is not None else None

    state_x = adam_init(model.enc_x.params, lr=config.lr)
    state_y = adam_init(model.enc_y.params, lr=config.lr)
    from .nn import MlpParams

    state_o = adam_init(MlpParams([(o, np.zeros(0)) for o in model.blocks], "identity"), lr=config.lr)

    history = TrainHistory()
    best = (np.inf, None, None)  # (val_loss, epoch, snapshot)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        model.enc_x.center = invariant_feature_mean(model.enc_x, xs)
        model.enc_y.center = invariant_feature_mean(model.enc_y, ys)
        order = shuffle_rng.permutation(n)
        l0_sum, loss_sum, n_batches = 0.0, 0.0, 0
        omega_sums = None
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size < 4:
                continue
            bx, by = xs[idx], ys[idx]
            res = empirical_loss(model, bx, by, config.gamma, perm=perm_rng.permutation(idx.size))
            if not np.isfinite(res.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: "
                    f"l0={res.l0}, centering={res.centering}, "
                    f"batch x range [{bx.min()}, {bx.max()}]"
                )
            gx = _chain_to_params(model.enc_x, bx, res.grad_u)
            gy = _chain_to_params(model.enc_y, by, res.grad_v)
            model.enc_x.params, state_x = _param_step(
                model.enc_x.params, gx, state_x, model.enc_x.layer_reps
            )
            model.enc_y.params, state_y = _param_step(
                model.enc_y.params, gy, state_y, model.enc_y.layer_reps
            )
            model.blocks, state_o = _blocks_step(model.blocks, res.grad_blocks, state_o)
            l0_sum += res.l0
            loss_sum += res.total
            if omega_sums is None:
                omega_sums = [b["omega"] for b in res.per_block]
            else:
                omega_sums = [s + b["omega"] for s, b in zip(omega_sums, res.per_block)]
            n_batches += 1
        record = {
            "epoch": epoch,
            "l0": l0_sum / max(n_batches, 1),
            "loss": loss_sum / max(n_batches, 1),
            "omega": [s / max(n_batches, 1) for s in (omega_sums or [])],
            "wall_time": time.perf_counter() - t0,
        }
        if val is not None:
            res_val = empirical_loss(
                model, val.x, val.y, config.gamma, perm=val_perm, with_grads=False
            )
            record["val_loss"] = res_val.total
            if res_val.total < best[0]:
                best = (res_val.total, epoch, model.copy())
        history.epochs.append(record)
        logger.debug("epoch %d: %s", epoch, record)
    if val is not None and best[2] is not None:
        history.best_epoch = best[1]
        model = best[2]
    return model, history


# ---------------------------------------------------------------------------
# Fitted operator
# ---------------------------------------------------------------------------


@dataclass
class FittedOperator:
    """Frozen encoders, whitened operator blocks, and the fitting sample.

    ``blocks_dense`` holds one ``(m_k d_k) x (m_k d_k)`` matrix per isotypic
    block, equal to the trained ``O_k kron I`` conjugated by the per-block
    whiteners; the represented kernel is unchanged by whitening.
    """

    enc_x: EquivariantEncoder
    enc_y: EquivariantEncoder
    blocks_dense: list
    whiten_x: list  # per-block feature transforms (C^{-1/2}), or identity
    whiten_y: list
    xs: np.ndarray  # fitting sample
    ys: np.ndarray
    whitened: bool

    @property
    def group(self):
        return self.enc_x.group

    @property
    def r(self) -> int:
        return self.enc_x.out_dim

    def operator(self) -> np.ndarray:
        out = np.zeros((self.r, self.r))
        for b, blk in zip(self.blocks_dense, self.enc_x.blocks):
            out[blk.rows, blk.rows] = b
        return out

    def features_x(self, xs: np.ndarray) -> np.ndarray:
        return self._transform(encode(self.enc_x, np.atleast_2d(xs)), self.enc_x, self.whiten_x)

    def features_y(self, ys: np.ndarray) -> np.ndarray:
        return self._transform(encode(self.enc_y, np.atleast_2d(ys)), self.enc_y, self.whiten_y)

    @staticmethod
    def _transform(feats, enc, whiteners):
        out = feats.copy()
        for w, blk in zip(whiteners, enc.blocks):
            out[:, blk.rows] = feats[:, blk.rows] @ w.T
        return out

    def kernel_pairs(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        u = self.features_x(xs)
        v = self.features_y(ys)
        return 1.0 + np.einsum("nr,rs,ns->n", u, self.operator(), v)

    def singular_values(self) -> list:
        """Per-block singular values of the materialized operator."""
        return [np.linalg.svd(b, compute_uv=False) for b in self.blocks_dense]


def _augmented_cov(enc: EquivariantEncoder, feats: np.ndarray) -> list:
    """Per-block orbit-augmented second-moment matrices of centered features."""
    covs = []
    irreps = {ir.id: ir for ir in enc.irreps}
    for blk, fb in zip(enc.blocks, _block_views(enc, feats)):
        f = _augmented(fb, irreps[blk.irrep_id].matrices)
        covs.append(f.T @ f / f.shape[0])
    return covs


def _inv_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    return (evecs * (1.0 / np.sqrt(evals))) @ evecs.T


def _sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    return (evecs * np.sqrt(evals)) @ evecs.T


def fit_statistics(
    model: EncpModel, dataset: Dataset, whiten: bool = True, cond_limit: float = 1e10
) -> FittedOperator:
    """Freeze encoders on the fitting sample and build the inference operator.

    Centering uses the group-invariant empirical means; per-block feature
    covariances are orbit-augmented.  Whitening is skipped (with a warning)
    for blocks whose covariance condition number exceeds ``cond_limit``.
    """
    enc_x = model.enc_x.copy()
    enc_y = model.enc_y.copy()
    enc_x.center = invariant_feature_mean(enc_x, dataset.x)
    enc_y.center = invariant_feature_mean(enc_y, dataset.y)
    u = encode(enc_x, dataset.x)
    v = encode(enc_y, dataset.y)
    covs_x = _augmented_cov(enc_x, u)
    covs_y = _augmented_cov(enc_y, v)
    whiten_x, whiten_y, blocks_dense = [], [], []
    whitened_all = whiten
    for o, blk, cx, cy in zip(model.blocks, enc_x.blocks, covs_x, covs_y):
        e_blk = np.kron(o, np.eye(blk.dim))
        use = whiten
        for c in (cx, cy):
            cond = np.linalg.cond(c)
            if use and cond > cond_limit:
                logger.warning(
                    "block %d: covariance condition number %.2e exceeds %.1e, skipping whitening",
                    blk.irrep_id,
                    cond,
                    cond_limit,
                )
                use = False
        if use:
            wx, wy = _inv_sqrt(cx), _inv_sqrt(cy)
            blocks_dense.append(_sqrt(cx) @ e_blk @ _sqrt(cy))
        else:
            wx = wy = np.eye(blk.size)
            blocks_dense.append(e_blk)
            whitened_all = False
        whiten_x.append(wx)
        whiten_y.append(wy)
    return FittedOperator(
        enc_x=enc_x,
        enc_y=enc_y,
        blocks_dense=blocks_dense,
        whiten_x=whiten_x,
        whiten_y=whiten_y,
        xs=dataset.x.copy(),
        ys=dataset.y.copy(),
        whitened=whitened_all,
    )
