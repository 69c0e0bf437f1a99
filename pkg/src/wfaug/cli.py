"""Deterministic command-line pipeline.

Subcommands: synth, split, augment, tune, train, eval, report. Every command
is a pure function of the merged manifests, its flags and the referenced
files, so rerunning it reproduces the outputs byte for byte. Flags override
manifest keys. All randomness flows from one root seed (--seed beats
run.seed, default 0); each stage derives its own stream from (seed, stage
name), so adding or removing one stage never shifts another's draws.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .augment import OPERATORS, hda_batch
from .evaluate import (RunReport, aggregate_metrics, closed_accuracy,
                       open_world_eval, sweep_operating_points,
                       tune_augmentation, write_report)
from .manifest import (Manifest, ManifestError, aug_config_from_manifest,
                       format_manifest, model_config_from_manifest,
                       parse_operator_order, split_spec_from_manifest,
                       train_config_from_manifest, tune_spec_from_manifest)
from .nn import (CheckpointError, dataset_accuracy, load_checkpoint,
                 save_checkpoint, train, write_history)
from .seeding import derive_rng
from .tpe import ObjectiveError, write_trial_log
from .traces import (TraceFormatError, load_dataset, make_splits,
                     one_hot_labels, save_dataset, synth_dataset)


def _note(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _root_seed(args, m: Manifest) -> int:
    return args.seed if args.seed is not None else m.get("run.seed", 0)


def _out_path(args, m: Manifest) -> str:
    out = args.out if args.out is not None else m.get("out.dir", None)
    if out is None:
        raise ManifestError("no output location: pass --out or set out.dir")
    return out


def _out_dir(args, m: Manifest) -> str:
    out = _out_path(args, m)
    os.makedirs(out, exist_ok=True)
    return out


def _flag_or_key(flag_value, m: Manifest, key: str):
    return flag_value if flag_value is not None else m.get(key)


def _load_data(m: Manifest):
    path = m.get("data.path")
    if not os.path.exists(path):
        raise ManifestError(f"data.path does not exist: {path}")
    return load_dataset(path, m.get("data.trace_len"))


def _load_splits(m: Manifest, seed: int):
    dataset = _load_data(m)
    return dataset, make_splits(dataset, split_spec_from_manifest(m, seed))


def _operator_order(m: Manifest, seed: int) -> tuple:
    """aug.order when given, else a seed-derived random permutation."""
    if m.has("aug.order"):
        return parse_operator_order(m.get("aug.order"))
    order = list(OPERATORS)
    derive_rng(seed, "order").shuffle(order)
    return tuple(order)


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_synth(args, m: Manifest) -> int:
    dataset = synth_dataset(
        num_classes=_flag_or_key(args.classes, m, "data.classes"),
        samples_per_class=_flag_or_key(args.per_class, m, "data.per_class"),
        trace_len=_flag_or_key(args.length, m, "data.trace_len"),
        noise_rate=_flag_or_key(args.noise, m, "data.noise"),
        seed=_root_seed(args, m))
    out = _out_path(args, m)
    save_dataset(dataset, out)
    _note(args, f"wrote {len(dataset)} traces to {out}")
    return 0


def cmd_split(args, m: Manifest) -> int:
    seed = _root_seed(args, m)
    _, (train_set, val_set, test_set) = _load_splits(m, seed)
    out = _out_dir(args, m)
    for name, part in (("train", train_set), ("val", val_set),
                       ("test", test_set)):
        save_dataset(part, os.path.join(out, f"{name}.txt"))
        _note(args, f"{name}: {len(part)} traces")
    return 0


def cmd_augment(args, m: Manifest) -> int:
    """One seeded augmentation pass over the whole file, saved as arrays.

    Mixing produces fractional trace values and soft labels, so the preview
    is written as float arrays (augmented_x.npy / augmented_y.npy) rather
    than the integer trace format.
    """
    seed = _root_seed(args, m)
    dataset = _load_data(m)
    cfg = aug_config_from_manifest(m, dataset.trace_len)
    if cfg is None:
        raise ManifestError(
            "no operators enabled; set aug.enable.<operator> = true")
    labels = one_hot_labels(dataset.labels, dataset.num_classes,
                            background_class=dataset.has_background())
    x, y = hda_batch(dataset.traces.astype(np.float64), labels, cfg,
                     derive_rng(seed, "augment"))
    out = _out_dir(args, m)
    np.save(os.path.join(out, "augmented_x.npy"), x)
    np.save(os.path.join(out, "augmented_y.npy"), y)
    _note(args, f"augmented {len(x)} traces into {out}")
    return 0


def cmd_tune(args, m: Manifest) -> int:
    seed = _root_seed(args, m)
    dataset, (train_set, val_set, _) = _load_splits(m, seed)
    order = _operator_order(m, seed)
    spec = tune_spec_from_manifest(m, order, mode=args.mode,
                                   budget=args.budget)
    width = dataset.num_classes + (1 if dataset.has_background() else 0)
    model_cfg = model_config_from_manifest(m, dataset.trace_len, width)
    train_cfg = train_config_from_manifest(m, seed)
    params, log = tune_augmentation(train_set, val_set, model_cfg, train_cfg,
                                    spec, seed)
    fragment = {"aug.order": ",".join(order)}
    for op in OPERATORS:
        fragment[f"aug.enable.{op}"] = "true"
    for name, value in params.items():
        fragment[f"aug.{name}"] = str(value)
    out = _out_dir(args, m)
    with open(os.path.join(out, "aug_params.cfg"), "w",
              encoding="utf-8") as fh:
        fh.write(format_manifest(fragment))
    write_trial_log(os.path.join(out, "tune_trials.csv"), log, seed)
    _note(args, f"chose {params} over {len(log)} trials")
    return 0


def cmd_train(args, m: Manifest) -> int:
    seed = _root_seed(args, m)
    dataset, (train_set, val_set, _) = _load_splits(m, seed)
    aug_cfg = aug_config_from_manifest(m, dataset.trace_len,
                                       default_order=_operator_order(m, seed))
    width = dataset.num_classes + (1 if dataset.has_background() else 0)
    model_cfg = model_config_from_manifest(m, dataset.trace_len, width)
    train_cfg = train_config_from_manifest(m, seed)
    model, history = train(model_cfg, train_cfg, train_set, val_set, aug_cfg)
    out = _out_dir(args, m)
    save_checkpoint(model, os.path.join(out, "model.ckpt"))
    write_history(os.path.join(out, "history.csv"), history)
    _note(args, f"best validation accuracy "
                f"{max(h.val_acc for h in history):.4f} over "
                f"{len(history)} epochs")
    return 0


def cmd_eval(args, m: Manifest) -> int:
    seed = _root_seed(args, m)
    dataset, (_, val_set, test_set) = _load_splits(m, seed)
    model = load_checkpoint(args.checkpoint)
    width = dataset.num_classes + (1 if dataset.has_background() else 0)
    if model.cfg.num_classes != width:
        raise ManifestError(
            f"checkpoint {args.checkpoint} outputs {model.cfg.num_classes} "
            f"classes but the dataset encodes {width}")
    if args.open_world:
        best_p, best_r, _ = sweep_operating_points(model, val_set)
        at_p = open_world_eval(model, test_set, best_p.threshold)
        at_r = open_world_eval(model, test_set, best_r.threshold)
        world = "open"
        metrics = {
            "precision_tuned_threshold": best_p.threshold,
            "precision_tuned_precision": at_p.precision,
            "precision_tuned_recall": at_p.recall,
            "recall_tuned_threshold": best_r.threshold,
            "recall_tuned_precision": at_r.precision,
            "recall_tuned_recall": at_r.recall,
        }
    else:
        if test_set.has_background():
            raise ManifestError(
                "dataset contains background traces; use --open-world")
        world = "closed"
        metrics = {"val_accuracy": dataset_accuracy(model, val_set),
                   "test_accuracy": closed_accuracy(model, test_set)}
    out = _out_dir(args, m)
    _write_json(os.path.join(out, "eval.json"),
                {"seed": seed, "world": world, "metrics": metrics,
                 "dataset": dict(dataset.provenance),
                 "checkpoint": str(args.checkpoint)})
    _note(args, f"{world}-world metrics: {metrics}")
    return 0


def cmd_report(args, m: Manifest) -> int:
    seeds, rows = [], []
    for run_dir in args.runs:
        path = os.path.join(run_dir, "eval.json")
        if not os.path.exists(path):
            raise ManifestError(f"no eval.json under {run_dir}")
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        seeds.append(int(payload["seed"]))
        rows.append(payload["metrics"])
    mean, std = aggregate_metrics(rows)
    report = RunReport(seeds=tuple(seeds), per_seed=tuple(rows), mean=mean,
                       std=std, meta={"runs": [str(r) for r in args.runs]})
    out = _out_dir(args, m)
    write_report(report, os.path.join(out, "report.json"),
                 os.path.join(out, "report.txt"))
    _note(args, f"aggregated {len(rows)} runs into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", action="append", default=[],
                        metavar="FILE",
                        help="manifest file; repeatable, later files win")
    common.add_argument("--seed", type=int, default=None,
                        help="root seed (overrides run.seed, default 0)")
    common.add_argument("--out", default=None,
                        help="output file or directory (overrides out.dir)")
    common.add_argument("--verbose", action="store_true",
                        help="progress notes on stderr")

    parser = argparse.ArgumentParser(
        prog="wfaug",
        description="few-shot website-fingerprinting experiments with "
                    "harmonious trace augmentation")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled trace file")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--len", dest="length", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common],
                       help="write train/val/test trace files")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", parents=[common],
                       help="offline augmentation preview as .npy arrays")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("tune", parents=[common],
                       help="search augmentation hyperparameters")
    p.add_argument("--mode", choices=("sequential", "independent"),
                   default=None, help="overrides tpe.mode")
    p.add_argument("--budget", type=int, default=None,
                   help="trials per parameter (overrides tpe.budget_per_param)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", parents=[common],
                       help="train a model and save the best checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--open-world", dest="open_world", action="store_true",
                   help="threshold sweep on validation, report both "
                        "operating points on test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common],
                       help="aggregate eval.json files into mean +/- std")
    p.add_argument("runs", nargs="+",
                   help="run directories, each holding an eval.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = Manifest.from_files(args.manifest)
        return args.func(args, manifest)
    except (ManifestError, TraceFormatError, CheckpointError, ObjectiveError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
