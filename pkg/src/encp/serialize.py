"""Checkpoint round-trips for encoders, models, and fitted operators.

Checkpoints are a JSON header plus a flat little-endian float64 payload (see
:mod:`encp.nn`).  Encoder checkpoints embed the group label, the layer
multiplicities, the input representation matrices and the isotypic basis, so
inference needs no reconstruction beyond the group's irrep table.
"""

from __future__ import annotations

import numpy as np

from .equivariant import EquivariantEncoder
from .groups import (
    GroupRepresentation,
    IsotypicBasis,
    IsotypicBlock,
    isotypic_representation,
    make_group,
    real_irreps,
)
from .model import EncpModel, FittedOperator
from .nn import MlpParams, load_checkpoint, save_checkpoint

__all__ = ["save_model", "load_model", "save_fitted", "load_fitted"]


def _encoder_payload(enc: EquivariantEncoder, prefix: str, header: dict, arrays: dict):
    header[f"{prefix}_activation"] = enc.params.activation
    header[f"{prefix}_n_layers"] = len(enc.params.layers)
    header[f"{prefix}_multiplicities"] = [
        rep.dim // enc.group.order for rep in enc.layer_reps[1:]
    ]
    header[f"{prefix}_blocks"] = [
        [blk.irrep_id, blk.multiplicity, blk.dim, blk.offset] for blk in enc.iso_basis.blocks
    ]
    arrays[f"{prefix}_rep_in"] = enc.rep_in.matrices
    arrays[f"{prefix}_q"] = enc.iso_basis.q
    arrays[f"{prefix}_center"] = enc.center
    for i, (w, b) in enumerate(enc.params.layers):
        arrays[f"{prefix}_w{i}"] = w
        arrays[f"{prefix}_b{i}"] = b


def _encoder_from_payload(prefix: str, header: dict, arrays: dict, group, irreps):
    from .equivariant import make_encoder

    rep_in = GroupRepresentation(group, arrays[f"{prefix}_rep_in"].shape[1], arrays[f"{prefix}_rep_in"])
    mults = header[f"{prefix}_multiplicities"]
    rng = np.random.default_rng(0)  # weights overwritten below
    enc = make_encoder(
        group, rep_in, mults[:-1], mults[-1], header[f"{prefix}_activation"], rng, irreps
    )
    layers = [
        (arrays[f"{prefix}_w{i}"], arrays[f"{prefix}_b{i}"])
        for i in range(header[f"{prefix}_n_layers"])
    ]
    enc.params = MlpParams(layers, header[f"{prefix}_activation"])
    blocks = tuple(IsotypicBlock(*row) for row in header[f"{prefix}_blocks"])
    q = arrays[f"{prefix}_q"]
    enc.iso_basis = IsotypicBasis(q, blocks, q.shape[0])
    enc.iso_rep = isotypic_representation(irreps, enc.iso_basis)
    enc.center = arrays[f"{prefix}_center"]
    return enc


def save_model(path, model: EncpModel, extra_header: dict | None = None) -> None:
    header = {"kind": "encp-model", "group": model.enc_x.group.label}
    if extra_header:
        header.update(extra_header)
    arrays: dict = {}
    _encoder_payload(model.enc_x, "encx", header, arrays)
    _encoder_payload(model.enc_y, "ency", header, arrays)
    header["n_blocks"] = len(model.blocks)
    for k, o in enumerate(model.blocks):
        arrays[f"block_{k}"] = o
    save_checkpoint(path, header, arrays)


def load_model(path) -> tuple:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "encp-model":
        raise ValueError(f"{path}: not a model checkpoint")
    group = make_group(header["group"])
    irreps = real_irreps(group)
    enc_x = _encoder_from_payload("encx", header, arrays, group, irreps)
    enc_y = _encoder_from_payload("ency", header, arrays, group, irreps)
    blocks = [arrays[f"block_{k}"] for k in range(header["n_blocks"])]
    return EncpModel(enc_x, enc_y, blocks), header


def save_fitted(path, op: FittedOperator, extra_header: dict | None = None) -> None:
    header = {"kind": "encp-fitted", "group": op.group.label, "whitened": op.whitened}
    if extra_header:
        header.update(extra_header)
    arrays: dict = {}
    _encoder_payload(op.enc_x, "encx", header, arrays)
    _encoder_payload(op.enc_y, "ency", header, arrays)
    header["n_blocks"] = len(op.blocks_dense)
    for k, (b, wx, wy) in enumerate(zip(op.blocks_dense, op.whiten_x, op.whiten_y)):
        arrays[f"dense_{k}"] = b
        arrays[f"whiten_x_{k}"] = wx
        arrays[f"whiten_y_{k}"] = wy
    arrays["fit_xs"] = op.xs
    arrays["fit_ys"] = op.ys
    save_checkpoint(path, header, arrays)


def load_fitted(path) -> tuple:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "encp-fitted":
        raise ValueError(f"{path}: not a fitted-operator checkpoint")
    group = make_group(header["group"])
    irreps = real_irreps(group)
    enc_x = _encoder_from_payload("encx", header, arrays, group, irreps)
    enc_y = _encoder_from_payload("ency", header, arrays, group, irreps)
    n = header["n_blocks"]
    op = FittedOperator(
        enc_x=enc_x,
        enc_y=enc_y,
        blocks_dense=[arrays[f"dense_{k}"] for k in range(n)],
        whiten_x=[arrays[f"whiten_x_{k}"] for k in range(n)],
        whiten_y=[arrays[f"whiten_y_{k}"] for k in range(n)],
        xs=arrays["fit_xs"],
        ys=arrays["fit_ys"],
        whitened=bool(header["whitened"]),
    )
    return op, header
