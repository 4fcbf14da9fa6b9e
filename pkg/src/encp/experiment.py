"""Config-driven experiment orchestration.

A JSON config describes the group prior, the data source, the model and
training hyperparameters, the evaluation, and an optional sweep over training
set sizes.  The dataset is split 70/15/15 into training, validation and test
portions; validation and test stay fixed while training subsets grow, models
are selected at the best validation loss, and all randomness flows through
``(seed, purpose)``-keyed counter-based streams, so reports are reproducible
byte for byte (timing is kept out of the report file).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .data import Dataset, read_dataset
from .equivariant import make_encoder
from .gmm import (
    MoonsBenchmarkSpec,
    build_spec,
    conditional_mean,
    moons_group_actions,
    natural_representation,
    sample,
    sample_moons,
)
from .groups import FiniteGroup, GroupRepresentation, make_group, trivial_representation
from .inference import observable_from_equivariant_values, quantile_intervals, regress
from .metrics import EvalReport, coverage_metrics, invariance_error, pmd_mse, regression_mse
from .model import (
    EncpModel,
    TrainConfig,
    TrainingDivergedError,
    fit_statistics,
    init_blocks,
    kernel_pairs,
    train,
)
from .rng import stream
from .serialize import save_fitted, save_model

logger = logging.getLogger(__name__)

__all__ = [
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "config_digest",
    "split_indices",
    "prepare_data",
    "build_model",
    "run_experiment",
]


class ConfigError(ValueError):
    """Invalid experiment config; message carries the field path."""


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["group", "data", "model", "training"],
    "additionalProperties": False,
    "properties": {
        "group": {"type": "string"},
        "data": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["gmm", "moons", "csv"]},
                "p": {"type": "integer", "minimum": 1},
                "q": {"type": "integer", "minimum": 1},
                "n_g": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 8},
                "seed": {"type": "integer"},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "path": {"type": "string"},
                "spec_group": {"type": "string"},
            },
        },
        "model": {
            "type": "object",
            "required": ["r"],
            "additionalProperties": False,
            "properties": {
                "r": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 0},
                "hidden_widths": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "activation": {"enum": ["tanh", "elu", "identity"]},
            },
        },
        "training": {
            "type": "object",
            "required": ["seeds"],
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 4},
                "epochs": {"type": "integer", "minimum": 1},
                "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "metrics": {"type": "array", "items": {"type": "string"}},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "n_bins": {"type": "integer", "minimum": 2},
                "pmd_cap": {"type": "integer", "minimum": 8},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["train_sizes"],
            "additionalProperties": False,
            "properties": {
                "train_sizes": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 8},
                    "minItems": 1,
                }
            },
        },
    },
}

_DEFAULTS = {
    "model": {"gamma": 1e-2, "hidden_widths": [32, 32], "activation": "tanh"},
    "training": {"lr": 1e-3, "batch_size": 256, "epochs": 100},
    "evaluation": {"metrics": None, "alpha": 0.1, "n_bins": 100, "pmd_cap": 1024},
}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    group_label: str
    data: dict
    model: dict
    training: dict
    evaluation: dict
    sweep_sizes: list | None

    @property
    def digest(self) -> str:
        return config_digest(self.raw)


def config_digest(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _with_defaults(section: str, cfg: dict) -> dict:
    out = dict(_DEFAULTS.get(section, {}))
    out.update(cfg)
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field '{path}': {exc.message}") from None
    group = make_group(raw["group"])
    model = _with_defaults("model", raw["model"])
    training = _with_defaults("training", raw["training"])
    evaluation = _with_defaults("evaluation", raw.get("evaluation", {}))
    if model["r"] % group.order != 0:
        raise ConfigError(
            f"config field 'model.r': {model['r']} is not a multiple of |{group.label}| = {group.order}"
        )
    for w in model["hidden_widths"]:
        if w % group.order != 0:
            raise ConfigError(
                f"config field 'model.hidden_widths': width {w} is not a multiple of "
                f"|{group.label}| = {group.order}"
            )
    if raw["data"]["type"] == "moons" and raw["group"] not in ("C2", "trivial"):
        raise ConfigError("config field 'group': the moons benchmark carries a C2 prior")
    sweep = raw.get("sweep", {}).get("train_sizes")
    return ExperimentConfig(
        raw=raw,
        group_label=raw["group"],
        data=dict(raw["data"]),
        model=model,
        training=training,
        evaluation=evaluation,
        sweep_sizes=list(sweep) if sweep else None,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return parse_config(raw)


def roundtrip_config(config: ExperimentConfig) -> ExperimentConfig:
    """Serialize and re-parse; used to assert config round-trip stability."""
    return parse_config(json.loads(json.dumps(config.raw)))


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    group: FiniteGroup
    rep_x: GroupRepresentation
    rep_y: GroupRepresentation
    dataset: Dataset
    gmm_spec: object | None  # SymmetricGmmSpec when type == "gmm"
    meta: dict


def actions_for(meta: dict, group: FiniteGroup, p: int, q: int):
    """Group actions implied by a dataset sidecar."""
    if meta.get("type") == "moons":
        sym_group, rep_x, rep_y = moons_group_actions()
        if group.label == "trivial":
            return trivial_representation(group, 1), trivial_representation(group, 2)
        return rep_x, rep_y
    return natural_representation(group, p), natural_representation(group, q)


def prepare_data(config: ExperimentConfig) -> PreparedData:
    group = make_group(config.group_label)
    data = config.data
    kind = data["type"]
    if kind == "gmm":
        p, q = data.get("p", 1), data.get("q", 1)
        rep_x = natural_representation(group, p)
        rep_y = natural_representation(group, q)
        # The generating prior may be richer than the model prior (an NCP
        # baseline trains with the trivial group on symmetric data), so the
        # spec group comes from the data section when given.
        spec_group = make_group(data.get("spec_group", config.group_label))
        spec_rep_x = natural_representation(spec_group, p)
        spec_rep_y = natural_representation(spec_group, q)
        spec = build_spec(spec_group, spec_rep_x, spec_rep_y, data.get("n_g", 3), data.get("seed", 0))
        ds = sample(spec, data.get("n", 8192), data.get("seed", 0) + 1)
        meta = {"type": "gmm", "group": spec_group.label, "n_g": data.get("n_g", 3)}
        return PreparedData(group, rep_x, rep_y, ds, spec, meta)
    if kind == "moons":
        mspec = MoonsBenchmarkSpec(beta=data.get("beta", 1.0))
        ds = sample_moons(mspec, data.get("n", 20000), data.get("seed", 0))
        _, rep_x, rep_y = moons_group_actions()
        if group.label == "trivial":
            rep_x = trivial_representation(group, 1)
            rep_y = trivial_representation(group, 2)
        return PreparedData(group, rep_x, rep_y, ds, None, {"type": "moons"})
    if kind == "csv":
        ds, meta = read_dataset(data["path"])
        rep_x, rep_y = actions_for(meta, group, ds.x.shape[1], ds.y.shape[1])
        return PreparedData(group, rep_x, rep_y, ds, None, meta)
    raise ConfigError(f"unknown data type {kind!r}")


def split_indices(n: int, seed: int):
    """Deterministic 70/15/15 split of ``range(n)``."""
    order = stream(seed, "split").permutation(n)
    n_train = int(round(0.70 * n))
    n_val = int(round(0.15 * n))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def build_model(
    group: FiniteGroup,
    rep_x: GroupRepresentation,
    rep_y: GroupRepresentation,
    model_cfg: dict,
    seed: int,
) -> EncpModel:
    mult = model_cfg["r"] // group.order
    hidden = [w // group.order for w in model_cfg["hidden_widths"]]
    act = model_cfg.get("activation", "tanh")
    enc_x = make_encoder(group, rep_x, hidden, mult, act, stream(seed, "init-enc-x"))
    enc_y = make_encoder(group, rep_y, hidden, mult, act, stream(seed, "init-enc-y"))
    return EncpModel(enc_x, enc_y, init_blocks(enc_x, stream(seed, "init-blocks")))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _default_metrics(prepared: PreparedData) -> list:
    if prepared.gmm_spec is not None:
        return ["pmd_mse", "invariance_error", "regression_mse"]
    if prepared.meta.get("type") == "moons":
        return ["coverage", "invariance_error"]
    return ["regression_mse", "invariance_error"]


def evaluate_run(
    trained: EncpModel,
    fitted,
    prepared: PreparedData,
    test: Dataset,
    eval_cfg: dict,
) -> EvalReport:
    metrics = eval_cfg.get("metrics") or _default_metrics(prepared)
    report = EvalReport(n_test=test.n)
    if prepared.gmm_spec is not None:
        data_rep_x, data_rep_y = prepared.gmm_spec.rep_x, prepared.gmm_spec.rep_y
    elif prepared.meta.get("type") == "moons":
        _, data_rep_x, data_rep_y = moons_group_actions()
    else:
        data_rep_x = data_rep_y = None
    if "pmd_mse" in metrics and prepared.gmm_spec is not None:
        report.pmd_mse = pmd_mse(
            trained, prepared.gmm_spec, test.x, test.y, cap=eval_cfg.get("pmd_cap", 1024)
        )
    if "invariance_error" in metrics and data_rep_x is not None:
        report.invariance_error = invariance_error(
            lambda a, b: kernel_pairs(trained, a, b), test.x, test.y, data_rep_x, data_rep_y
        )
    if "regression_mse" in metrics:
        obs = observable_from_equivariant_values(
            "y", fitted.ys, fitted.enc_y.rep_in, fitted.group.order
        )
        preds = regress(fitted, obs, test.x)
        if prepared.gmm_spec is not None:
            target = conditional_mean(prepared.gmm_spec, test.x)
        else:
            target = test.y
        report.regression_mse = regression_mse(preds, target)
    if "coverage" in metrics:
        alpha = eval_cfg.get("alpha", 0.1)
        ints = quantile_intervals(
            fitted, test.x, (alpha / 2, 1 - alpha / 2), n_bins=eval_cfg.get("n_bins", 100)
        )
        cov, rcov, size = coverage_metrics(ints, test.y)
        report.coverage = cov
        report.relaxed_coverage = rcov
        report.mean_set_size = size
        report.extra["target_coverage"] = 1 - alpha
    return report


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

_SWEEP_COLUMNS = [
    "n_train",
    "seed",
    "status",
    "pmd_mse",
    "invariance_error",
    "regression_mse",
    "coverage",
    "relaxed_coverage",
    "mean_set_size",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Train, select on validation, evaluate on the fixed test split, and write
    ``report.json`` plus ``sweep.csv`` and per-run artifacts under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = prepare_data(config)
    data_seed = config.data.get("seed", 0)
    tr_idx, val_idx, te_idx = split_indices(prepared.dataset.n, data_seed)
    train_pool = prepared.dataset.subset(tr_idx)
    val_ds = prepared.dataset.subset(val_idx)
    test_ds = prepared.dataset.subset(te_idx)
    sizes = config.sweep_sizes or [train_pool.n]
    if max(sizes) > train_pool.n:
        raise ConfigError(
            f"config field 'sweep.train_sizes': largest size {max(sizes)} exceeds the "
            f"training split ({train_pool.n} of {prepared.dataset.n})"
        )

    rows = []
    for seed in config.training["seeds"]:
        for n_train in sizes:
            run_dir = out_dir / f"runs/seed{seed}-n{n_train}"
            run_dir.mkdir(parents=True, exist_ok=True)
            sub = train_pool.subset(np.arange(n_train))
            cfg = TrainConfig(
                r=config.model["r"],
                gamma=config.model["gamma"],
                lr=config.training["lr"],
                batch_size=min(config.training["batch_size"], n_train),
                epochs=config.training["epochs"],
                seed=seed,
                hidden_widths=tuple(config.model["hidden_widths"]),
                activation=config.model["activation"],
            )
            model = build_model(prepared.group, prepared.rep_x, prepared.rep_y, config.model, seed)
            row = {"n_train": n_train, "seed": seed}
            try:
                trained, history = train(model, sub, cfg, val=val_ds)
                fitted = fit_statistics(trained, sub)
                report = evaluate_run(trained, fitted, prepared, test_ds, config.evaluation)
                report.n_train = n_train
                report.seed = seed
                row.update({k: v for k, v in report.to_dict().items() if v is not None})
                row["status"] = "ok"
                save_model(run_dir / "model.ckpt", trained, {"config_digest": config.digest})
                save_fitted(run_dir / "fitted.ckpt", fitted, {"config_digest": config.digest})
                with open(run_dir / "history.json", "w") as fh:
                    json.dump(
                        {"config_digest": config.digest, **history.summary()},
                        fh,
                        indent=2,
                        sort_keys=True,
                    )
                report.extra["config_digest"] = config.digest
                report.write(run_dir / "report.json")
            except TrainingDivergedError as exc:
                logger.error("seed %d, n=%d failed: %s", seed, n_train, exc)
                row["status"] = "failed"
                row["error"] = str(exc)
            rows.append(row)

    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in _SWEEP_COLUMNS) + "\n")

    summary = {}
    for n_train in sizes:
        ok = [r for r in rows if r["n_train"] == n_train and r.get("status") == "ok"]
        agg = {}
        for key in ("pmd_mse", "invariance_error", "regression_mse", "coverage",
                    "relaxed_coverage", "mean_set_size"):
            vals = [r[key] for r in ok if key in r]
            if vals:
                agg[key] = float(np.median(vals))
        summary[str(n_train)] = agg
    report = {
        "config_digest": config.digest,
        "group": config.group_label,
        "rows": rows,
        "median_by_size": summary,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report
