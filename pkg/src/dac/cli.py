"""Command-line front end.

    python -m dac.cli generate --kind smudge --fraction 0.1 --seed 1 --out runs/data
    python -m dac.cli train --train runs/data/train.dset --val runs/data/val.dset --out runs/dac
    python -m dac.cli clean  --train ... --val ... [--test ...] --out runs/clean
    python -m dac.cli sweep  --train ... --val ... --alphas 1e-3,1e6 --out runs/sweep
    python -m dac.cli eval   --checkpoint runs/dac/best.ckpt --dataset runs/data/test.dset --split test --out runs/eval

Configuration is resolved as defaults < ``--config FILE`` < flags. Every
config key ``section.name`` is also a flag ``--section.name``; the common ones
have short aliases (``--kind``, ``--fraction``, ``--seed``, ``--fixed-alpha``,
``--alphas``, ``--train``, ``--val``, ``--test``, ``--checkpoint``, ``--out``).
Each command writes the resolved config to ``<out>/config.txt``.

Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 numeric failure, 5 format or
version error, 6 dimension mismatch, 7 empty or unusable data.
"""

import argparse
import logging
import os
import sys

from . import config as C
from .data import KIND_ALIASES, load_dataset, save_dataset
from .errors import (
    AbstentionSaturationError,
    ConfigurationError,
    DimensionMismatchError,
    EmptyTrainingSetError,
    FormatError,
    HaltedRunError,
    InvalidInputError,
    NumericFailureError,
)
from .experiments import make_splits
from .metrics import (
    ACCURACY_MODES,
    abstention_pr,
    abstention_rate,
    accuracy,
    predict_proba,
    renormalized_probs,
    risk_coverage,
    write_curve_csv,
    write_json,
)
from .nn import load_checkpoint, save_checkpoint
from .pipeline import (
    clean_and_retrain,
    fixed_alpha_sweep,
    train_dac,
    write_stats_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_FORMAT = 5
EXIT_DIMENSION = 6
EXIT_DATA = 7

SCHEMA_VERSION = 1

ALIASES = {
    "--seed": "seed",
    "--kind": "noise.kind",
    "--fraction": "noise.fraction",
    "--fixed-alpha": "train.fixed_alpha",
    "--alphas": "sweep.alphas",
    "--train": "io.train",
    "--val": "io.val",
    "--test": "io.test",
    "--checkpoint": "io.checkpoint",
    "--out": "io.out",
}


class UsageError(Exception):
    pass


def _parent_parser():
    p = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    for flag, key in ALIASES.items():
        p.add_argument(flag, dest=key, default=argparse.SUPPRESS, metavar="VALUE", help=f"alias for --{key}")
    for key, _tp, default in C.all_keys():
        if key == "seed":
            continue
        p.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="VALUE", help=f"default: {C._fmt(default)}")
    return p


def build_parser():
    parent = _parent_parser()
    parser = argparse.ArgumentParser(prog="dac", description="Abstention-based training and label-noise cleaning.", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[parent], allow_abbrev=False, help="write train/val/test dataset files")
    sub.add_parser("train", parents=[parent], allow_abbrev=False, help="train an abstaining classifier")
    sub.add_parser("clean", parents=[parent], allow_abbrev=False, help="eliminate abstained samples and retrain")
    sub.add_parser("sweep", parents=[parent], allow_abbrev=False, help="fixed-alpha gamma trajectories")
    ev = sub.add_parser("eval", parents=[parent], allow_abbrev=False, help="metrics for a checkpoint on a dataset")
    ev.add_argument("--dataset", help="dataset file to evaluate (defaults to io.test)")
    ev.add_argument("--split", default="test", help="label recorded in the output (e.g. train or test)")
    return parser


def resolve_config(args):
    values = C.load_text_file(args.config) if args.config else {}
    for key, _tp, _d in C.all_keys():
        if key in vars(args):
            values[key] = getattr(args, key)
    return C.build(values)


def _out_dir(cfg):
    if not cfg.io.out:
        raise UsageError("an output directory is required (--out)")
    os.makedirs(cfg.io.out, exist_ok=True)
    return cfg.io.out


def _require_file(path, what):
    if not path:
        raise UsageError(f"{what} file is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} file {path!r} does not exist")
    return path


def _echo_config(cfg, out):
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(C.dump(cfg))


def cmd_generate(cfg):
    if cfg.noise.kind not in KIND_ALIASES:
        raise UsageError(f"unknown noise kind {cfg.noise.kind!r}; choose from {sorted(KIND_ALIASES)}")
    out = _out_dir(cfg)
    d = cfg.data
    splits = make_splits(cfg)
    train, val, test = splits.train, splits.val, splits.test
    paths = {}
    for name, ds in zip(("train", "val", "test"), (train, val, test)):
        paths[name] = os.path.join(out, f"{name}.dset")
        save_dataset(ds, paths[name])
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "derived_seeds": splits.seeds,
        "data": d,
        "noise": {
            "kind": KIND_ALIASES[cfg.noise.kind],
            "fraction": cfg.noise.fraction,
            "magnitude": cfg.noise.magnitude,
            "width": cfg.noise.width,
            "offset": cfg.noise.offset,
            "blend_lambda": cfg.noise.blend_lambda,
            "target_class": cfg.noise.target_class,
        },
        "splits": {
            name: {
                "file": os.path.basename(paths[name]),
                "n": ds.n,
                "randomized_fraction": float(ds.randomized.mean()) if ds.n else 0.0,
                "corrupted_fraction": float(ds.corrupted.mean()) if ds.n else 0.0,
                "structured_fraction": float(ds.structured.mean()) if ds.n else 0.0,
            }
            for name, ds in zip(("train", "val", "test"), (train, val, test))
        },
    }
    write_json(os.path.join(out, "dataset.json"), sidecar)
    _echo_config(cfg, out)
    return sidecar


def _load_pair(cfg):
    train = load_dataset(_require_file(cfg.io.train, "training set"))
    val = load_dataset(_require_file(cfg.io.val, "validation set"))
    if (train.k, train.d) != (val.k, val.d):
        raise DimensionMismatchError(f"train is k={train.k}, d={train.d} but val is k={val.k}, d={val.d}")
    return train, val


def _stats_writer(path):
    write_stats_csv(path, [])

    def on_epoch(st, model):
        write_stats_csv(path, [st], append=True)

    return on_epoch


def cmd_train(cfg):
    train, val = _load_pair(cfg)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    tc = cfg.train_config()
    res = train_dac(train, val, tc, on_epoch=_stats_writer(os.path.join(out, "stats.csv")))
    meta = {"best_epoch": res.best_epoch, "k": train.k, "kind": "dac"}
    save_checkpoint(os.path.join(out, "best.ckpt"), res.model, epoch=res.best_epoch, meta=meta)
    save_checkpoint(os.path.join(out, "final.ckpt"), res.final_model, res.opt_state, epoch=tc.epochs - 1, meta={"k": train.k, "kind": "dac"})
    best = res.stats[res.best_epoch]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "best_epoch": res.best_epoch,
        "gamma_at_best": best.gamma,
        "val_acc_at_best": best.val_acc,
        "final_gamma": res.stats[-1].gamma,
        "epochs": len(res.stats),
    }
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


def cmd_clean(cfg):
    train, val = _load_pair(cfg)
    test = load_dataset(_require_file(cfg.io.test, "test set")) if cfg.io.test else None
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    tc = cfg.train_config()
    dac = train_dac(train, val, tc, on_epoch=_stats_writer(os.path.join(out, "dac_stats.csv")))
    save_checkpoint(os.path.join(out, "dac_best.ckpt"), dac.model, epoch=dac.best_epoch, meta={"k": train.k, "kind": "dac"})
    result = clean_and_retrain(train, val, tc, cfg.downstream_config(), test=test, dac_result=dac)
    save_checkpoint(os.path.join(out, "downstream.ckpt"), result.model, epoch=result.report.downstream_epochs - 1, meta={"k": train.k, "kind": "plain"})
    report = {
        "schema_version": SCHEMA_VERSION,
        "summary": result.report.summary(),
        "accuracy": result.accuracy,
        "accuracy_split": "test" if test is not None else "val",
        "report": result.report,
    }
    write_json(os.path.join(out, "clean_report.json"), report)
    return report


def _alpha_tag(a):
    return format(a, "g").replace("+", "")


def cmd_sweep(cfg):
    alphas = list(cfg.sweep.alphas)
    if not alphas:
        raise UsageError("need at least one alpha (--alphas)")
    train, val = _load_pair(cfg)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    runs = fixed_alpha_sweep(train, val, cfg.train_config(), alphas)
    entries = []
    for run in runs:
        name = f"gamma_alpha_{_alpha_tag(run.alpha)}.csv"
        write_stats_csv(os.path.join(out, name), run.stats)
        entries.append(
            {
                "alpha": run.alpha,
                "file": name,
                "terminal": run.terminal,
                "terminal_gamma": run.terminal_gamma,
                "epochs_completed": len(run.gammas),
                "halted": run.halted,
            }
        )
    summary = {"schema_version": SCHEMA_VERSION, "runs": entries}
    write_json(os.path.join(out, "sweep_summary.json"), summary)
    return summary


def cmd_eval(cfg, dataset_path=None, split="test"):
    model, _opt, epoch, meta = load_checkpoint(_require_file(cfg.io.checkpoint, "checkpoint"))
    ds = load_dataset(_require_file(dataset_path or cfg.io.test, "dataset"))
    if model.layer_dims[0] != ds.d:
        raise DimensionMismatchError(f"checkpoint expects d={model.layer_dims[0]}, dataset has d={ds.d}")
    if model.n_outputs not in (ds.k, ds.k + 1):
        raise DimensionMismatchError(f"checkpoint has {model.n_outputs} outputs, dataset has k={ds.k}")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    probs = renormalized_probs(predict_proba(model, ds.features), ds.k)
    curve = risk_coverage(probs, ds.original_labels)
    write_curve_csv(os.path.join(out, "risk_coverage.csv"), curve)
    metrics = {
        "schema_version": SCHEMA_VERSION,
        "split": split,
        "n": ds.n,
        "k": ds.k,
        "checkpoint_epoch": epoch,
        "has_abstention": model.n_outputs == ds.k + 1,
        "abstention_rate": abstention_rate(model, ds),
        "accuracy": {m: accuracy(model, ds, m, labels=ds.original_labels) for m in ACCURACY_MODES},
        "accuracy_vs_given_labels": {m: accuracy(model, ds, m) for m in ACCURACY_MODES},
        "abstention_pr": {
            "structured": abstention_pr(model, ds),
            "randomized": abstention_pr(model, ds, ds.randomized),
            "corrupted": abstention_pr(model, ds, ds.corrupted),
        },
    }
    write_json(os.path.join(out, "metrics.json"), metrics)
    return metrics


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "clean":
            cmd_clean(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        else:
            cmd_eval(cfg, args.dataset, args.split)
    except (UsageError, ConfigurationError) as exc:
        print(f"dac {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HaltedRunError, NumericFailureError, AbstentionSaturationError) as exc:
        print(f"dac {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"dac {args.command}: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DimensionMismatchError as exc:
        print(f"dac {args.command}: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (EmptyTrainingSetError, InvalidInputError) as exc:
        print(f"dac {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"dac {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
