"""Command-line entry points.

Subcommands: train, sweep, ensemble, stability, report. Every flag can be
defaulted through an environment variable with the ``SELFDISTILL_`` prefix
(flag ``--teacher-size`` -> ``SELFDISTILL_TEACHER_SIZE``); explicit flags
win over the environment.

Exit codes: 0 success, 1 configuration error, 2 runtime/divergence error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import CsvSchema, SyntheticSpec
from .distill import DistillConfig, TrainConfig
from .encoder import ModelConfig
from .errors import (
    ConfigError,
    ContractError,
    InputError,
    SelfDistillError,
    UsageError,
)
from .harness import (
    DEFAULT_K_GRID,
    DEFAULT_LAMBDA_GRID,
    DatasetConfig,
    ExperimentConfig,
    emit_report,
    ensemble_experiment,
    render_summary,
    run_experiment,
    stability_study,
    sweep,
)

ENV_PREFIX = "SELFDISTILL_"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _env(flag: str):
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"))


def _add(parser, flag: str, **kwargs):
    """add_argument with an environment-variable default."""
    raw = _env(flag)
    if raw is not None:
        cast = kwargs.get("type", str)
        kwargs["default"] = cast(raw)
    parser.add_argument(f"--{flag}", **kwargs)


def _add_train_flags(p: _Parser) -> None:
    _add(p, "mode", choices=["baseline", "sda", "sdv"], default="baseline")
    _add(p, "lambda", dest="lam", type=float, default=1.0,
         help="distillation weight")
    _add(p, "teacher-size", default="1",
         help="teacher window size K, or 'all' (sda only)")
    _add(p, "snapshot-every", type=int, default=1)
    _add(p, "seed", type=int, default=0)
    _add(p, "data-seed", type=int, default=None,
         help="data-order seed (defaults to --seed)")
    _add(p, "dataset", default="synthetic",
         help="'synthetic', a synthetic-spec .json file, or a train .csv/.tsv")
    _add(p, "eval-dataset", default=None, help="test csv (csv datasets only)")
    _add(p, "dev-dataset", default=None, help="optional dev csv")
    _add(p, "dataset-seed", type=int, default=1234,
         help="generation seed for synthetic data")
    _add(p, "label-col", type=int, default=0)
    _add(p, "text-cols", default="1", help="comma-separated text column indices")
    _add(p, "n-classes", type=int, default=4)
    _add(p, "delimiter", default=",")
    _add(p, "label-base", type=int, default=0,
         help="smallest label value in the csv; labels are rebased to 0")
    _add(p, "epochs", type=int, default=4)
    _add(p, "micro-batch", type=int, default=8)
    _add(p, "accum-steps", type=int, default=2)
    _add(p, "lr-encoder", type=float, default=1e-3)
    _add(p, "lr-head", type=float, default=5e-2)
    _add(p, "warmup-prop", type=float, default=0.1)
    _add(p, "weight-decay", type=float, default=0.01)
    _add(p, "dropout", type=float, default=0.1)
    _add(p, "vocab-size", type=int, default=2000)
    _add(p, "max-len", type=int, default=64)
    _add(p, "dim", type=int, default=32)
    _add(p, "n-layers", type=int, default=2)
    _add(p, "n-heads", type=int, default=2)
    _add(p, "ffn-dim", type=int, default=128)
    _add(p, "select-by", choices=["final", "best_dev"], default="final")
    _add(p, "out", default="runs/out", help="output directory for reports")
    p.add_argument("--save-checkpoints", action="store_true",
                   default=_env("save-checkpoints") is not None,
                   help="write a parameter checkpoint at every epoch boundary")


def _parse_teacher_size(raw: str):
    return "all" if raw == "all" else int(raw)


def _parse_int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok != ""]


def _dataset_config(args) -> DatasetConfig:
    name = args.dataset
    if name == "synthetic":
        return DatasetConfig(
            source="synthetic",
            synthetic=SyntheticSpec(n_classes=args.n_classes),
            dataset_seed=args.dataset_seed,
        )
    path = Path(name)
    if path.suffix == ".json":
        spec = SyntheticSpec.from_dict(json.loads(path.read_text()))
        return DatasetConfig(source="synthetic", synthetic=spec,
                             dataset_seed=args.dataset_seed)
    schema = CsvSchema(
        label_col=args.label_col,
        text_cols=tuple(_parse_int_list(args.text_cols)),
        n_classes=args.n_classes,
        delimiter=args.delimiter,
        label_base=args.label_base,
    )
    return DatasetConfig(
        source="csv",
        train_path=str(path),
        eval_path=args.eval_dataset,
        dev_path=args.dev_dataset,
        schema=schema,
        dataset_seed=args.dataset_seed,
    )


def _experiment_config(args) -> ExperimentConfig:
    dataset = _dataset_config(args)
    n_classes = (dataset.synthetic.n_classes if dataset.source == "synthetic"
                 else dataset.schema.n_classes)
    model = ModelConfig(
        vocab_size=args.vocab_size,
        max_len=args.max_len,
        dim=args.dim,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        ffn_dim=args.ffn_dim,
        n_classes=n_classes,
        dropout_p=args.dropout,
    )
    distill = DistillConfig(
        mode=args.mode,
        lam=args.lam,
        teacher_size=_parse_teacher_size(args.teacher_size),
        snapshot_every=args.snapshot_every,
    )
    train = TrainConfig(
        epochs=args.epochs,
        micro_batch=args.micro_batch,
        accum_steps=args.accum_steps,
        lr_encoder=args.lr_encoder,
        lr_head=args.lr_head,
        warmup_prop=args.warmup_prop,
        weight_decay=args.weight_decay,
        select_by=args.select_by,
    )
    return ExperimentConfig(model=model, distill=distill, train=train,
                            dataset=dataset, seed=args.seed,
                            data_seed=args.data_seed)


def build_parser() -> _Parser:
    parser = _Parser(prog="selfdistill",
                     description="self-ensemble / self-distillation experiments")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_train = sub.add_parser("train", help="one fine-tuning run")
    _add_train_flags(p_train)

    p_sweep = sub.add_parser("sweep", help="grid sweep over lambda or K")
    _add_train_flags(p_sweep)
    _add(p_sweep, "axis", choices=["lambda", "k"], default="lambda")
    _add(p_sweep, "grid", default=None,
         help="comma-separated grid values (defaults per axis)")
    _add(p_sweep, "seeds", default="0", help="comma-separated seeds")

    p_ens = sub.add_parser("ensemble", help="voted + averaged ensembles")
    _add_train_flags(p_ens)
    _add(p_ens, "n-models", type=int, default=4)
    _add(p_ens, "seeds", default="0,1,2,3", help="comma-separated seeds")

    p_stab = sub.add_parser("stability", help="data-order stability study")
    _add_train_flags(p_stab)
    _add(p_stab, "data-seeds", default="0,1,2,3,4,5,6,7,8,9",
         help="comma-separated data-order seeds")
    _add(p_stab, "init-seed", type=int, default=0)

    p_rep = sub.add_parser("report", help="re-render stored reports")
    p_rep.add_argument("paths", nargs="+", help="report files or directories")
    _add(p_rep, "baseline", default=None,
         help="baseline report for relative-change column")
    return parser


def _cmd_train(args) -> int:
    config = _experiment_config(args)
    checkpoint_dir = (Path(args.out) / "checkpoints"
                      if args.save_checkpoints else None)
    result = run_experiment(config, checkpoint_dir=checkpoint_dir)
    paths = emit_report(result, args.out)
    report = result.report
    print(f"wrote {', '.join(str(p) for p in paths)}")
    if report.final_student:
        print(f"final test error {report.final_student['test_error']:.4f} "
              f"(accuracy {report.final_student['test_accuracy']:.4f}) "
              f"[{report.wall_clock_s:.1f}s]")
    return 0


def _cmd_sweep(args) -> int:
    config = _experiment_config(args)
    if args.grid is None:
        grid = DEFAULT_LAMBDA_GRID if args.axis == "lambda" else DEFAULT_K_GRID
    elif args.axis == "lambda":
        grid = [float(tok) for tok in args.grid.split(",") if tok != ""]
    else:
        grid = [_parse_teacher_size(tok) for tok in args.grid.split(",")
                if tok != ""]
    table = sweep(config, args.axis, grid, _parse_int_list(args.seeds))
    paths = emit_report(table, args.out)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    print(render_summary(args.out))
    return 0


def _cmd_ensemble(args) -> int:
    config = _experiment_config(args)
    report = ensemble_experiment(config, args.n_models,
                                 _parse_int_list(args.seeds))
    paths = emit_report(report, args.out)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    print(render_summary(args.out))
    return 0


def _cmd_stability(args) -> int:
    config = _experiment_config(args)
    results = stability_study(config, _parse_int_list(args.data_seeds),
                              args.init_seed)
    paths = emit_report(results, args.out)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    print(render_summary(args.out))
    return 0


def _cmd_report(args) -> int:
    for path in args.paths:
        print(render_summary(path, baseline_path=args.baseline))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "ensemble": _cmd_ensemble,
    "stability": _cmd_stability,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, UsageError, ContractError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid value: {exc}", file=sys.stderr)
        return 1
    except SelfDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
