"""Command-line entry point: ``svqvae train|eval|generate|codes``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every input is validated before any output is written.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .data import Dataset, load_labeled_csv, load_mnist_idx, make_blobs, stratified_split
from .model import (
    ModelConfig, dense_matrix_config, estimate_class_latent_stats, generate, mnist_config,
)
from .numeric import Rng
from .training import CheckpointError, load_checkpoint, save_checkpoint, train


class UsageError(Exception):
    """Invalid configuration or arguments (exit code 2)."""


@dataclass
class RunConfig:
    model: ModelConfig
    data: dict
    base_dir: Path
    covariance: str = "diagonal"


PRESETS = {"mnist": mnist_config, "dense_matrix": dense_matrix_config}


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _read_json_config(path: Path) -> tuple[dict, dict]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), dict):
        raise UsageError(f"{path}: config needs a 'data' object")
    data = dict(doc["data"])
    check_data_spec(data, path.parent)
    return doc, data


def read_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    doc, data = _read_json_config(path)
    fields = dict(doc.get("model", {}))
    if "seed" in doc:
        fields.setdefault("seed", doc["seed"])
    fields.update({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = doc.get("preset")
    try:
        if preset is None:
            model = ModelConfig(**fields)
        elif preset == "mnist":
            model = mnist_config(**fields)
        elif preset == "dense_matrix":
            model = dense_matrix_config(**fields)
        else:
            raise UsageError(f"{path}: unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    except TypeError as exc:
        raise UsageError(f"{path}: bad model settings ({exc})") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    cov = doc.get("covariance", "diagonal")
    if cov not in ("diagonal", "full"):
        raise UsageError(f"{path}: covariance must be 'diagonal' or 'full'")
    return RunConfig(model, data, path.parent, cov)


def check_data_spec(data: dict, base: Path) -> None:
    fmt = data.get("format")
    if fmt == "mnist":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in data:
                raise UsageError(f"mnist data needs '{key}'")
            if not _resolve(base, data[key]).is_file():
                raise UsageError(f"data file not found: {_resolve(base, data[key])}")
    elif fmt == "csv":
        for key in ("path", "label_column"):
            if key not in data:
                raise UsageError(f"csv data needs '{key}'")
        if not _resolve(base, data["path"]).is_file():
            raise UsageError(f"data file not found: {_resolve(base, data['path'])}")
    elif fmt == "blobs":
        for key in ("classes", "dims", "per_class"):
            if key not in data:
                raise UsageError(f"blobs data needs '{key}'")
    else:
        raise UsageError(f"unknown data format {fmt!r}; expected mnist, csv or blobs")
    frac = data.get("train_fraction", 0.9)
    if not 0 < frac < 1:
        raise UsageError(f"train_fraction must be in (0, 1), got {frac}")


def load_split(data: dict, base: Path) -> tuple[Dataset, Dataset]:
    """Build (train, test) from a data spec.  Splits use ``split_seed`` (default 0)."""
    fmt = data["format"]
    try:
        if fmt == "mnist":
            train_ds = load_mnist_idx(_resolve(base, data["train_images"]), _resolve(base, data["train_labels"]))
            test_ds = load_mnist_idx(_resolve(base, data["test_images"]), _resolve(base, data["test_labels"]))
            if "train_subsample" in data:
                keep = Rng(data.get("split_seed", 0)).permutation(train_ds.n_samples)[: data["train_subsample"]]
                train_ds = train_ds.subset(np.sort(keep))
            return train_ds, test_ds
        if fmt == "csv":
            vr = data.get("value_range")
            full = load_labeled_csv(_resolve(base, data["path"]), data["label_column"],
                                    None if vr is None else tuple(vr))
        else:
            full, _ = make_blobs(Rng(data.get("seed", 0)), data["classes"], data["dims"], data["per_class"],
                                 data.get("center_spread", 1.0), data.get("noise_std", 0.1))
        return stratified_split(full, data.get("train_fraction", 0.9), Rng(data.get("split_seed", 0)))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load data: {exc}") from None


def data_from_args(args) -> tuple[dict, Path]:
    p = Path(args.data)
    if not p.is_file():
        raise UsageError(f"data file not found: {p}")
    if p.suffix.lower() == ".csv":
        data = {"format": "csv", "path": str(p.resolve()), "label_column": args.label_column,
                "train_fraction": args.train_fraction, "split_seed": args.split_seed}
        if args.value_range:
            data["value_range"] = args.value_range
        return data, p.parent
    _, data = _read_json_config(p)
    return data, p.parent


def _load_model(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)[0]
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None


def _check_compatible(model, ds: Dataset) -> None:
    cfg = model.config
    if ds.n_features != cfg.input_dim:
        raise UsageError(f"data has {ds.n_features} features, model expects {cfg.input_dim}")
    if cfg.variant == "supervised" and ds.n_classes != cfg.num_codes:
        raise UsageError(f"data has {ds.n_classes} classes, model has {cfg.num_codes} codes")


def command_train(args) -> int:
    overrides = {"variant": args.variant, "seed": args.seed, "epochs": args.epochs,
                 "batch_size": args.batch_size, "learning_rate": args.lr, "beta": args.beta,
                 "gamma": args.gamma, "grad_clip": args.grad_clip}
    run = read_run_config(args.config, overrides)
    train_ds, test_ds = load_split(run.data, run.base_dir)
    cfg = run.model
    if cfg.variant == "supervised" and train_ds.n_classes != cfg.num_codes:
        raise UsageError(f"data has {train_ds.n_classes} classes, config has {cfg.num_codes} codes")
    if train_ds.n_features != cfg.input_dim:
        raise UsageError(f"data has {train_ds.n_features} features, config expects {cfg.input_dim}")
    if cfg.image_shape is None and train_ds.image_shape is not None:
        cfg.image_shape = train_ds.image_shape
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history, state = train(cfg, train_ds, Rng(cfg.seed),
                                  eval_ds=test_ds if args.eval_each_epoch else None,
                                  progress=lambda line: print(line, flush=True))
    save_checkpoint(model, out / "checkpoint.json", state if args.save_optimizer else None)
    history.to_csv(out / "history.csv")
    return 0


def command_eval(args) -> int:
    model = _load_model(args.model)
    data, base = data_from_args(args)
    train_ds, test_ds = load_split(data, base)
    ds = train_ds if args.split == "train" else test_ds
    _check_compatible(model, ds)
    report = analysis.evaluate(model, ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["split"] = args.split
    doc["variant"] = model.config.variant
    out.write_text(json.dumps(doc, indent=2))
    analysis.write_matrix_csv(out.parent / "confusion.csv", report.confusion, report.class_names, report.code_names)
    analysis.write_matrix_csv(out.parent / "distances.csv", report.distance_matrix,
                              report.code_names, report.code_names)
    print(f"split={args.split} perplexity={report.perplexity:.6g} mse={report.mse:.6g} "
          f"accuracy={report.accuracy if report.accuracy is None else format(report.accuracy, '.6g')}")
    return 0


def command_generate(args) -> int:
    model = _load_model(args.model)
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    names = model.class_names or tuple(str(i) for i in range(model.config.num_codes))
    class_index = None
    if args.class_name is not None:
        if args.class_name not in names:
            raise UsageError(f"unknown class {args.class_name!r}; known classes: {', '.join(names)}")
        class_index = names.index(args.class_name)
    data, base = data_from_args(args)
    train_ds, _ = load_split(data, base)
    _check_compatible(model, train_ds)
    stats = estimate_class_latent_stats(model, train_ds, args.cov, args.jitter)
    try:
        samples, classes = generate(model, stats, args.count, Rng(args.seed), class_index)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "samples.csv", "w", newline="") as f:
        if args.count:
            w = csv.writer(f)
            w.writerow(["class", *(f"x{i}" for i in range(samples.shape[1]))])
            for c, row in zip(classes, samples):
                w.writerow([names[c], *(repr(v.item()) for v in row)])
    shape = model.config.image_shape
    if shape is not None:
        for i, (c, row) in enumerate(zip(classes, samples)):
            analysis.write_pgm(out / f"sample_{i:05d}_{analysis._safe_name(names[c])}.pgm",
                               row.reshape(shape), model.config.output_range)
    return 0


def command_codes(args) -> int:
    model = _load_model(args.model)
    names = analysis.code_names(model)
    if len(names) < 2:
        raise UsageError("code analyses need at least two codes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    protos = analysis.decode_codes(model)
    analysis.write_matrix_csv(out / "prototypes.csv", protos, names, [f"x{i}" for i in range(protos.shape[1])])
    if model.config.image_shape is not None:
        analysis.write_prototypes(out, protos, names, model.config.output_range, model.config.image_shape)
    dist = analysis.code_distance_matrix(model.embedding)
    analysis.write_matrix_csv(out / "distances.csv", dist, names, names)
    graph = analysis.nearest_partner_graph(dist, names)
    partition = analysis.louvain(graph, Rng(args.seed))
    (out / "graph.dot").write_text(analysis.graph_dot(graph, partition))
    (out / "graph.json").write_text(analysis.graph_json(graph, partition))
    print(f"codes={len(names)} communities={partition.n_communities} modularity={partition.modularity:.6g}")
    return 0


def _add_data_args(p) -> None:
    p.add_argument("--data", required=True, help="run config (.json) or labeled CSV file")
    p.add_argument("--label-column", default="label")
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--value-range", type=float, nargs=2, metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svqvae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint.json + history.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", choices=["supervised", "baseline"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--grad-clip", type=float, help="clip the global gradient norm (off by default)")
    p.add_argument("--eval-each-epoch", action="store_true", help="also log test perplexity and MSE")
    p.add_argument("--save-optimizer", action="store_true", help="store Adam moments in the checkpoint")
    p.set_defaults(func=command_train)

    p = sub.add_parser("eval", help="write report.json, confusion.csv and distances.csv")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=command_eval)

    p = sub.add_parser("generate", help="sample new data from per-class latent Gaussians")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--class", dest="class_name")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--cov", choices=["diagonal", "full"], default="diagonal")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=command_generate)

    p = sub.add_parser("codes", help="decode codes, distances, partner graph and communities")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=command_codes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
