"""Command-line interface: generate-data, train, evaluate, plot.

Options resolve in precedence order: explicit flag, then YAML config file
(``--config``), then built-in default. The fully resolved configuration is
echoed to stdout and serialized as JSON next to the command's outputs, so
every artifact records how it was produced.

Exit codes: 0 success, 1 usage error (bad flags, bad config keys, missing
prerequisites), 2 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import yaml

from . import data as data_mod
from . import evaluation as eval_mod
from . import training as train_mod
from .errors import CliUsageError, ElastisrError
from .models import ModelConfig, Normalizer, build_model, count_parameters
from .residuals import LossWeights

OUT_ROOT_ENV = "ELASTISR_OUT_ROOT"

GENERATE_DEFAULTS = {
    "out": "dataset",
    "q_start": 0.0,
    "q_end": 4.0,
    "dq": 0.04,
    "lr": 32,
    "hr": 128,
    "hr_source": "fem",
    "coarse_nodes": 41,
    "fine_nodes": 16384,
    "split_ratio": 0.8,
    "split_seed": 0,
    "jobs": 1,
}

TRAIN_DEFAULTS = {
    "data": None,
    "arch": None,
    "out": None,
    "epochs": 2000,
    "lr": 1e-4,
    "batch_size": 8,
    "seed": 0,
    "split_ratio": None,
    "split_seed": None,
    "lbfgs": True,
    "lbfgs_iters": 500,
    "dtype": "float32",
    "eval_every": 0,
}

EVALUATE_DEFAULTS = {
    "data": None,
    "ckpt": None,
    "out": "report",
    "indices": None,
    "bicubic": True,
}

PLOT_DEFAULTS = {
    "report": "report",
    "data": None,
    "samples": None,
    "out": None,
}


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "."))


def _resolve_path(value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else _out_root() / p


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise CliUsageError(f"cannot read config {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise CliUsageError(f"config {path} must be a flat mapping")
    return raw


def _merge(args, defaults: dict, command: str) -> dict:
    config = _load_config(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise CliUsageError(
            f"unknown config keys for {command}: {', '.join(sorted(unknown))}"
        )
    merged = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
        elif key in config:
            merged[key] = config[key]
        else:
            merged[key] = default
    return merged


def _require(merged: dict, key: str, flag: str):
    if merged[key] is None:
        raise CliUsageError(f"missing required option {flag}")


def _echo_config(command: str, merged: dict, out_path: Path):
    resolved = {"command": command, **{k: _jsonable(v) for k, v in merged.items()}}
    print(f"resolved configuration for {command}:")
    print(json.dumps(resolved, indent=2))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(resolved, indent=2))


def _jsonable(v):
    return str(v) if isinstance(v, Path) else v


def _parse_indices(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    try:
        return [int(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise CliUsageError(f"bad index list {text!r}: {exc}") from exc


def cmd_generate_data(args) -> int:
    merged = _merge(args, GENERATE_DEFAULTS, "generate-data")
    out = _resolve_path(merged["out"])
    merged["out"] = out
    _echo_config("generate-data", merged, out / "run_config.json")
    dataset = data_mod.generate_dataset(
        q_start=float(merged["q_start"]),
        q_end=float(merged["q_end"]),
        dq=float(merged["dq"]),
        lr_resolution=int(merged["lr"]),
        hr_resolution=int(merged["hr"]),
        hr_source=str(merged["hr_source"]),
        coarse_nodes=int(merged["coarse_nodes"]),
        fine_nodes=int(merged["fine_nodes"]),
        split_ratio=float(merged["split_ratio"]),
        split_seed=int(merged["split_seed"]),
        jobs=int(merged["jobs"]),
    )
    data_mod.save_dataset(dataset, out)
    print(
        f"wrote {len(dataset)} samples "
        f"(train {len(dataset.train_indices)} / test {len(dataset.test_indices)}) to {out}"
    )
    return 0


def _dataset_split(dataset, merged) -> tuple[list[int], list[int]]:
    ratio = merged.get("split_ratio")
    seed = merged.get("split_seed")
    if ratio is None and seed is None and dataset.train_indices:
        return dataset.train_indices, dataset.test_indices
    ratio = 0.8 if ratio is None else float(ratio)
    seed = 0 if seed is None else int(seed)
    return train_mod.split_dataset(dataset, ratio, seed)


def cmd_train(args) -> int:
    merged = _merge(args, TRAIN_DEFAULTS, "train")
    _require(merged, "data", "--data")
    _require(merged, "arch", "--arch")
    arch = str(merged["arch"])
    if arch not in ("fsrcnn", "rdn"):
        raise CliUsageError(f"--arch must be fsrcnn or rdn, got {arch!r}")
    out = _resolve_path(merged["out"] if merged["out"] else f"checkpoints/{arch}.pt")
    merged["out"] = out
    _echo_config("train", merged, out.parent / f"{out.stem}_run_config.json")

    dataset = data_mod.load_dataset(_resolve_path(merged["data"]))
    train_idx, test_idx = _dataset_split(dataset, merged)
    config = train_mod.TrainConfig(
        epochs=int(merged["epochs"]),
        learning_rate=float(merged["lr"]),
        batch_size=int(merged["batch_size"]),
        seed=int(merged["seed"]),
        lbfgs_max_iters=int(merged["lbfgs_iters"]),
        dtype=str(merged["dtype"]),
        eval_every=int(merged["eval_every"]),
    )
    dtype = config.torch_dtype()
    train_data = train_mod.TrainData.from_dataset(dataset, train_idx, dtype)
    eval_data = (
        train_mod.TrainData.from_dataset(dataset, test_idx, dtype) if test_idx else None
    )
    normalizer = Normalizer().fit(dataset.samples[i].lr.values for i in train_idx)
    first = dataset.samples[train_idx[0]]
    model_config = ModelConfig(arch=arch, scale=eval_mod._infer_scale(first.lr, first.hr))
    model = build_model(model_config, seed=config.seed)
    print(f"{arch}: {count_parameters(model)} trainable parameters")
    weights = LossWeights.from_problem(dataset.material, dataset.domain, dataset.u_ref)
    print(f"loss weights: {weights}")

    def log_fn(record):
        if record["epoch"] % 25 == 0 or record["epoch"] == 1:
            print(
                f"epoch {record['epoch']:5d}  loss {record['total']:.6f}  "
                f"lr {record['learning_rate']:.2e}"
            )

    history = train_mod.train(
        model, normalizer, train_data, config,
        weights=weights, eval_data=eval_data, log_fn=log_fn,
    )
    print(f"adam best loss {history.best_loss:.6f} at epoch {history.best_epoch}")
    if merged["lbfgs"] and config.lbfgs_max_iters > 0:
        result = train_mod.lbfgs_finetune(
            model, normalizer, train_data, config, weights=weights
        )
        history.lbfgs = result
        print(
            f"lbfgs: {result['iterations']} iterations, "
            f"loss {result['entry_loss']:.6f} -> {result['exit_loss']:.6f}"
        )
        if result["warning"]:
            print(f"lbfgs warning: {result['warning']}")
    out.parent.mkdir(parents=True, exist_ok=True)
    extra = {
        "arch": arch,
        "dataset": str(_resolve_path(merged["data"])),
        "train_indices": list(train_idx),
        "test_indices": list(test_idx),
    }
    train_mod.save_checkpoint(out, model, model_config, normalizer, config, history, extra)
    print(f"saved checkpoint to {out}")
    return 0


def _parse_ckpt_specs(specs) -> dict[str, Path]:
    if specs is None:
        raise CliUsageError("missing required option --ckpt")
    if isinstance(specs, (str, Path)):
        specs = [specs]
    out: dict[str, Path] = {}
    for spec in specs:
        text = str(spec)
        if "=" in text:
            name, _, path = text.partition("=")
        else:
            name, path = Path(text).stem, text
        if name in out:
            raise CliUsageError(f"duplicate checkpoint name {name!r}")
        out[name] = _resolve_path(path)
    return out


def cmd_evaluate(args) -> int:
    merged = _merge(args, EVALUATE_DEFAULTS, "evaluate")
    _require(merged, "data", "--data")
    ckpt_paths = _parse_ckpt_specs(merged["ckpt"])
    out = _resolve_path(merged["out"])
    merged["out"] = out
    merged["ckpt"] = {k: str(v) for k, v in ckpt_paths.items()}
    _echo_config("evaluate", merged, out / "run_config.json")

    data_dir = _resolve_path(merged["data"])
    dataset = data_mod.load_dataset(data_dir)
    checkpoints = {}
    for name, path in ckpt_paths.items():
        if not Path(path).is_file():
            raise CliUsageError(f"checkpoint {path} does not exist")
        checkpoints[name] = train_mod.load_checkpoint(path)
    indices = _parse_indices(merged["indices"]) if merged["indices"] is not None else None
    metadata = {
        "dataset": str(data_dir),
        "manifest_sha256": data_mod.manifest_hash(data_dir),
        "checkpoints": {k: str(v) for k, v in ckpt_paths.items()},
    }
    report = eval_mod.evaluate(
        dataset,
        checkpoints,
        indices,
        include_bicubic=bool(merged["bicubic"]),
        metadata=metadata,
    )
    report.save(out)
    print(report.to_text())
    print(f"report written to {out}")
    return 0


def cmd_plot(args) -> int:
    merged = _merge(args, PLOT_DEFAULTS, "plot")
    report_dir = _resolve_path(merged["report"])
    if not (report_dir / eval_mod.REPORT_JSON).is_file():
        raise CliUsageError(
            f"no report found at {report_dir}; run 'elastisr evaluate' first"
        )
    report = eval_mod.EvalReport.load(report_dir)
    data_dir = merged["data"] or report.metadata.get("dataset")
    if not data_dir:
        raise CliUsageError("report does not record its dataset; pass --data")
    dataset = data_mod.load_dataset(_resolve_path(data_dir))
    ckpt_paths = report.metadata.get("checkpoints", {})
    checkpoints = {
        name: train_mod.load_checkpoint(path) for name, path in ckpt_paths.items()
    }
    if merged["samples"] is not None:
        sample_ids = _parse_indices(merged["samples"])
    else:
        sample_ids = [report.samples[0]["index"]]
    out = _resolve_path(merged["out"]) if merged["out"] else report_dir
    merged["out"] = out
    merged["samples"] = sample_ids
    _echo_config("plot", merged, out / "plot_run_config.json")
    include_bicubic = "bicubic" in report.aggregates
    for idx in sample_ids:
        path = eval_mod.render_contours(
            dataset, checkpoints, report, idx, out, include_bicubic=include_bicubic
        )
        print(f"wrote {path}")
    return 0


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="elastisr",
        description="Physics-informed super-resolution of elastostatics fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="solve the FEM sweep and write a dataset")
    g.add_argument("--config", help="YAML config file")
    g.add_argument("--out", help="dataset directory")
    g.add_argument("--q-start", dest="q_start", type=float)
    g.add_argument("--q-end", dest="q_end", type=float)
    g.add_argument("--dq", type=float)
    g.add_argument("--lr", type=int, help="LR grid resolution per axis")
    g.add_argument("--hr", type=int, help="HR grid resolution per axis")
    g.add_argument("--hr-source", dest="hr_source", choices=("fem", "analytic"))
    g.add_argument("--coarse-nodes", dest="coarse_nodes", type=int)
    g.add_argument("--fine-nodes", dest="fine_nodes", type=int)
    g.add_argument("--split-ratio", dest="split_ratio", type=float)
    g.add_argument("--split-seed", dest="split_seed", type=int)
    g.add_argument("--jobs", type=int)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train one architecture on the physics loss")
    t.add_argument("--config", help="YAML config file")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--arch", choices=("fsrcnn", "rdn"))
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float, help="Adam learning rate")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--split-ratio", dest="split_ratio", type=float)
    t.add_argument("--split-seed", dest="split_seed", type=int)
    t.add_argument("--lbfgs", action="store_true", default=None)
    t.add_argument("--no-lbfgs", dest="lbfgs", action="store_false", default=None)
    t.add_argument("--lbfgs-iters", dest="lbfgs_iters", type=int)
    t.add_argument("--dtype", choices=("float32", "float64"))
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score reconstructions against HR references")
    e.add_argument("--config", help="YAML config file")
    e.add_argument("--data", help="dataset directory")
    e.add_argument(
        "--ckpt",
        action="append",
        help="checkpoint to evaluate, as PATH or NAME=PATH (repeatable)",
    )
    e.add_argument("--out", help="report directory")
    e.add_argument("--indices", help="comma-separated sample indices (default: test split)")
    e.add_argument("--no-bicubic", dest="bicubic", action="store_false", default=None)
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render contour panels for report samples")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--report", help="report directory from 'evaluate'")
    p.add_argument("--data", help="dataset directory (default: recorded in report)")
    p.add_argument("--samples", help="comma-separated sample indices")
    p.add_argument("--out", help="output directory for figures")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args) or 0
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ElastisrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
