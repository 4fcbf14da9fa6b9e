"""Command line interface.

Subcommands: ``group inspect``, ``gmm generate``, ``train``, ``eval``,
``infer regress``, ``infer quantile``, ``sweep``.  The ``ENCP_LOG``
environment variable sets the logging level.  All paths are explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiment as xp
from .data import read_dataset, write_dataset
from .gmm import build_spec, natural_representation, sample
from .groups import isotypic_decomposition, make_group, real_irreps, regular_representation
from .inference import observable_from_equivariant_values, quantile_intervals, regress
from .model import TrainConfig, fit_statistics, train
from .serialize import load_fitted, save_fitted, save_model


def _setup_logging():
    level = os.environ.get("ENCP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _fmt_row(values) -> str:
    out = []
    for v in values:
        if isinstance(v, (float, np.floating)):
            out.append(repr(float(v)))
        else:
            out.append(str(v))
    return ",".join(out)


def cmd_group_inspect(args) -> int:
    group = make_group(args.label)
    group.validate()
    irreps = real_irreps(group)
    print(f"group {group.label}: order {group.order}")
    print("irrep_id,dim," + ",".join(f"chi_g{g}" for g in group.elements()))
    for ir in irreps:
        print(_fmt_row([ir.id, ir.dim, *ir.character.tolist()]))
    basis = isotypic_decomposition(regular_representation(group), irreps)
    print("isotypic blocks (irrep_id,multiplicity,dim,offset):")
    for blk in basis.blocks:
        print(_fmt_row([blk.irrep_id, blk.multiplicity, blk.dim, blk.offset]))
    print("Q of the regular representation:")
    for row in basis.q:
        print(_fmt_row(row.tolist()))
    return 0


def cmd_gmm_generate(args) -> int:
    group = make_group(args.group)
    rep_x = natural_representation(group, args.px)
    rep_y = natural_representation(group, args.qy)
    spec = build_spec(group, rep_x, rep_y, args.ng, args.seed)
    ds = sample(spec, args.n, args.seed + 1)
    meta = {"type": "gmm", "group": group.label, "n_g": args.ng, "gmm_seed": args.seed}
    path = write_dataset(ds, args.out, meta)
    print(f"wrote {ds.n} samples to {path}")
    return 0


def cmd_train(args) -> int:
    ds, meta = read_dataset(args.data)
    group = make_group(args.group)
    rep_x, rep_y = xp.actions_for(meta, group, ds.x.shape[1], ds.y.shape[1])
    model_cfg = {
        "r": args.r,
        "gamma": args.gamma,
        "hidden_widths": [int(w) for w in args.widths.split(",")],
        "activation": args.activation,
    }
    cfg = TrainConfig(
        r=args.r,
        gamma=args.gamma,
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        hidden_widths=tuple(model_cfg["hidden_widths"]),
        activation=args.activation,
    )
    cfg.validate(group.order)
    tr_idx, val_idx, _ = xp.split_indices(ds.n, args.seed)
    train_ds, val_ds = ds.subset(tr_idx), ds.subset(val_idx)
    model = xp.build_model(group, rep_x, rep_y, model_cfg, args.seed)
    trained, history = train(model, train_ds, cfg, val=val_ds)
    fitted = fit_statistics(trained, train_ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = {"data_meta": meta, "group": group.label}
    save_model(out / "model.ckpt", trained, header)
    save_fitted(out / "fitted.ckpt", fitted, header)
    with open(out / "history.json", "w") as fh:
        json.dump(history.summary(), fh, indent=2, sort_keys=True)
    best = history.best_epoch
    print(f"trained {cfg.epochs} epochs (best validation epoch: {best}); artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    ds, meta = read_dataset(args.data)
    from .serialize import load_model

    model, header = load_model(Path(args.run) / "model.ckpt")
    fitted, _ = load_fitted(Path(args.run) / "fitted.ckpt")
    group = model.enc_x.group
    _, _, te_idx = xp.split_indices(ds.n, args.seed)
    test = ds.subset(te_idx)
    spec = None
    if meta.get("type") == "gmm":
        sgroup = make_group(meta["group"])
        spec = build_spec(
            sgroup,
            natural_representation(sgroup, ds.x.shape[1]),
            natural_representation(sgroup, ds.y.shape[1]),
            meta["n_g"],
            meta["gmm_seed"],
        )
        if spec.digest != ds.spec_digest:
            raise SystemExit("dataset sidecar does not match the regenerated mixture spec")
    prepared = xp.PreparedData(group, model.enc_x.rep_in, model.enc_y.rep_in, ds, spec, meta)
    report = xp.evaluate_run(model, fitted, prepared, test, {"alpha": args.alpha})
    report.write(args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _read_probe_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def cmd_infer_regress(args) -> int:
    fitted, _ = load_fitted(Path(args.run) / "fitted.ckpt")
    xs = _read_probe_csv(args.x_file)
    obs = observable_from_equivariant_values(
        "y", fitted.ys, fitted.enc_y.rep_in, fitted.group.order
    )
    preds = regress(fitted, obs, xs)
    with open(args.out, "w") as fh:
        fh.write(",".join(f"zhat_{j}" for j in range(preds.shape[1])) + "\n")
        for row in np.atleast_2d(preds):
            fh.write(_fmt_row(row.tolist()) + "\n")
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_infer_quantile(args) -> int:
    fitted, _ = load_fitted(Path(args.run) / "fitted.ckpt")
    xs = _read_probe_csv(args.x_file)
    alphas = tuple(float(a) for a in args.alpha.split(","))
    ints = quantile_intervals(fitted, xs, alphas, n_bins=args.n_bins)
    q = ints.shape[1]
    with open(args.out, "w") as fh:
        cols = [f"y{j}_q{a}" for j in range(q) for a in alphas]
        fh.write(",".join(cols) + "\n")
        for i in range(ints.shape[0]):
            fh.write(_fmt_row(ints[i].reshape(-1).tolist()) + "\n")
    print(f"wrote quantiles for {ints.shape[0]} probes to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = xp.load_config(args.config)
    report = xp.run_experiment(config, args.out)
    n_ok = sum(1 for r in report["rows"] if r.get("status") == "ok")
    print(f"completed {n_ok}/{len(report['rows'])} runs; report in {Path(args.out) / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_group = sub.add_parser("group", help="group-theory utilities")
    sub_group = p_group.add_subparsers(dest="subcommand", required=True)
    p_inspect = sub_group.add_parser("inspect", help="print irreps and the isotypic basis")
    p_inspect.add_argument("label")
    p_inspect.set_defaults(func=cmd_group_inspect)

    p_gmm = sub.add_parser("gmm", help="synthetic mixture datasets")
    sub_gmm = p_gmm.add_subparsers(dest="subcommand", required=True)
    p_gen = sub_gmm.add_parser("generate", help="sample a symmetric mixture dataset")
    p_gen.add_argument("--group", required=True)
    p_gen.add_argument("--px", type=int, default=1)
    p_gen.add_argument("--qy", type=int, default=1)
    p_gen.add_argument("--ng", type=int, default=3)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gmm_generate)

    p_train = sub.add_parser("train", help="train one model on a dataset directory")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--group", required=True, help="symmetry prior; 'trivial' for the baseline")
    p_train.add_argument("--r", type=int, required=True)
    p_train.add_argument("--gamma", type=float, default=1e-2)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--batch", type=int, default=256)
    p_train.add_argument("--epochs", type=int, default=100)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--widths", default="32,32")
    p_train.add_argument("--activation", default="tanh")
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a run directory on the test split")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--seed", type=int, default=0, help="split seed used at training time")
    p_eval.add_argument("--alpha", type=float, default=0.1)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="inference from a fitted run")
    sub_infer = p_infer.add_subparsers(dest="subcommand", required=True)
    p_reg = sub_infer.add_parser("regress", help="conditional-mean predictions")
    p_reg.add_argument("--run", required=True)
    p_reg.add_argument("--x-file", required=True)
    p_reg.add_argument("--out", required=True)
    p_reg.set_defaults(func=cmd_infer_regress)
    p_q = sub_infer.add_parser("quantile", help="per-dimension conditional quantiles")
    p_q.add_argument("--run", required=True)
    p_q.add_argument("--alpha", required=True, help="comma-separated levels, e.g. 0.05,0.95")
    p_q.add_argument("--x-file", required=True)
    p_q.add_argument("--n-bins", type=int, default=100)
    p_q.add_argument("--out", required=True)
    p_q.set_defaults(func=cmd_infer_quantile)

    p_sweep = sub.add_parser("sweep", help="run a config-driven experiment (with size sweeps)")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, xp.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
