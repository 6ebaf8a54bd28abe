"""Command-line entry point: ``cnng train-single | reflect | eval``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import config as cfg
from .data import Dataset, IdxError, load_idx_pair, split, subsample
from .nn import accuracy, init_network, mlp_specs, sgd_steps, train
from .persist import ModelFileError, load_model, save_model, save_network
from .reflect import ReflectionError, error_clusters, evaluate, reflect
from .report import render

log = logging.getLogger("cnng")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def load_datasets(data: cfg.DataConfig) -> tuple[Dataset, Dataset]:
    train_set = load_idx_pair(data.train_images, data.train_labels, data.name, data.transpose)
    if data.test_images is not None:
        test_set = load_idx_pair(data.test_images, data.test_labels, data.name, data.transpose)
        num_classes = max(train_set.num_classes, test_set.num_classes)
        train_set.num_classes = test_set.num_classes = num_classes
    else:
        train_set, test_set = split(train_set, 1.0 - data.test_fraction, data.split_seed)
    if data.subsample is not None:
        train_set = subsample(train_set, data.subsample, data.subsample_seed)
    if data.test_subsample is not None:
        test_set = subsample(test_set, data.test_subsample, data.subsample_seed)
    return train_set, test_set


def _emit(text: str, out_dir: Path | None, filename: str | None):
    sys.stdout.write(text)
    if out_dir is not None and filename is not None:
        (out_dir / filename).write_text(text)


def cmd_train_single(run: cfg.RunConfig) -> int:
    train_set, test_set = load_datasets(run.data)
    rc = run.reflection
    net = init_network(mlp_specs(train_set.inputs.shape[1], rc.hidden, train_set.num_classes),
                       rc.general_train.seed)
    net, losses = train(net, train_set.inputs, train_set.labels, rc.general_train)
    acc = accuracy(net, test_set.inputs, test_set.labels)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    path = run.out_dir / "single.cnnf"
    meta = {f"config.{k}": v for k, v in rc.echo().items()}
    meta.update({"dataset.fingerprint": train_set.fingerprint(), "test.accuracy": repr(acc),
                 "train.sgd_steps": str(sgd_steps(len(train_set), rc.general_train))})
    save_network(net, path, meta)
    if run.report_format == "structured":
        text = json.dumps({"format": "cnng-single", "test_accuracy": acc, "test_size": len(test_set),
                           "final_epoch_loss": losses[-1], "model": path.name},
                          indent=2, sort_keys=True) + "\n"
    else:
        text = f"single_nn test_accuracy={acc:.4f} ({len(test_set)} examples) model={path.name}\n"
    _emit(text, run.out_dir, "single_report." + ("json" if run.report_format == "structured" else "txt"))
    return EXIT_OK


def _report_name(fmt: str) -> str:
    return "report.json" if fmt == "structured" else "report.txt"


def cmd_reflect(run: cfg.RunConfig) -> int:
    train_set, test_set = load_datasets(run.data)
    model = reflect(train_set, run.reflection)
    clusters = error_clusters(model, train_set, run.reflection.error_loss_threshold)
    report = evaluate(model, test_set, run.reflection.cv_folds, clusters, run.reflection)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, run.out_dir / "model.cnng")
    _emit(render(report, run.report_format, run.data.name), run.out_dir, _report_name(run.report_format))
    return EXIT_OK


def cmd_eval(run: cfg.RunConfig, model_path: Path, on: str) -> int:
    model = load_model(model_path)
    train_set, test_set = load_datasets(run.data)
    target = train_set if on == "train" else test_set
    if target.inputs.shape[1] != model.input_dim:
        raise cfg.ConfigError(f"dataset has {target.inputs.shape[1]} features, model expects {model.input_dim}")
    target.num_classes = model.num_classes
    clusters = error_clusters(model, train_set, run.reflection.error_loss_threshold)
    report = evaluate(model, target, run.reflection.cv_folds, clusters, run.reflection)
    _emit(render(report, run.report_format, f"{run.data.name} ({on})"), None, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnng", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="base seed for general/specialist/k-means stages")
        p.add_argument("--k", type=int, help="number of specialist networks")
        p.add_argument("--subsample", type=int, help="stratified training subsample size")
        p.add_argument("--epochs-general", type=int)
        p.add_argument("--epochs-specialist", type=int)
        p.add_argument("--balance-router", action="store_true", default=None,
                       help="weight router training samples by inverse class frequency")
        p.add_argument("--emnist-orientation", choices=("corrected", "raw"))
        p.add_argument("--report", choices=("text", "structured"))
        p.add_argument("--out", type=Path, help="output directory")

    common(sub.add_parser("train-single", help="train the general network alone"))
    common(sub.add_parser("reflect", help="build a CNNG and evaluate it"))
    p_eval = sub.add_parser("eval", help="evaluate a saved CNNG model")
    common(p_eval)
    p_eval.add_argument("--model", type=Path, required=True)
    p_eval.add_argument("--on", choices=("test", "train"), default="test")
    return parser


def _overrides(args) -> dict:
    mapping = {
        "k": "reflection.k",
        "subsample": "dataset.subsample",
        "epochs_general": "general.epochs",
        "epochs_specialist": "specialist.epochs",
        "balance_router": "router.balance_classes",
        "emnist_orientation": "dataset.emnist_orientation",
        "report": "output.report",
    }
    out = {dotted: getattr(args, attr) for attr, dotted in mapping.items()
           if getattr(args, attr) is not None}
    if args.out is not None:
        out["output.dir"] = str(args.out.resolve())
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        raw, base_dir = cfg.load_raw(args.config, _overrides(args))
        if args.seed is not None:
            cfg.apply_seed(raw, args.seed)
        run = cfg.build(raw, base_dir)
        if args.command == "train-single":
            return cmd_train_single(run)
        if args.command == "reflect":
            return cmd_reflect(run)
        if not args.model.is_file():
            raise cfg.ConfigError(f"model file not found: {args.model}")
        return cmd_eval(run, args.model, args.on)
    except (cfg.ConfigError, IdxError, yaml.YAMLError) as exc:
        print(f"cnng: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelFileError as exc:
        print(f"cnng: cannot load model: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ReflectionError as exc:
        print(f"cnng: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"cnng: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
