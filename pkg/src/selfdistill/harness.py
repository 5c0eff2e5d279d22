"""Experiment orchestration: single runs, ensembles, sweeps, stability
studies, and report emission.

Every experiment here is a pure function of (configs, seeds): rerunning it
writes byte-identical report files. Emission separates the canonical JSON
report from flat CSV curve files so external plotting never parses JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    CsvSchema,
    SyntheticSpec,
    TaskData,
    iter_batches,
    load_csv,
    make_synthetic,
    prepare_task,
)
from .distill import (
    DistillConfig,
    TrainConfig,
    TrainResult,
    evaluate_params,
    fine_tune,
)
from .encoder import ModelConfig, ParameterSet
from .ensemble import EnsembleSet, average_parameters, voted_predict
from .errors import ConfigError, InputError, SelfDistillError
from .reporting import (
    RunReport,
    StabilityResult,
    SweepTable,
    load_json,
    save_json,
)

DEFAULT_LAMBDA_GRID = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]
DEFAULT_K_GRID = [1, 2, 3, 4, 5, "all"]

def stability_strategies(lam: float = 1.0) -> list:
    """The four boxes of the stability comparison."""
    return [
        ("baseline", DistillConfig(mode="baseline")),
        ("sda_k1", DistillConfig(mode="sda", lam=lam, teacher_size=1)),
        ("sda_k5", DistillConfig(mode="sda", lam=lam, teacher_size=5)),
        ("sdv_k5", DistillConfig(mode="sdv", lam=lam, teacher_size=5)),
    ]


@dataclass(frozen=True)
class DatasetConfig:
    """Where a run's data comes from: a synthetic spec or CSV files."""

    source: str = "synthetic"            # synthetic | csv
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    dataset_seed: int = 1234
    train_path: str | None = None
    eval_path: str | None = None
    dev_path: str | None = None
    schema: CsvSchema | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset source {self.source!r}")
        if self.source == "csv":
            if not self.train_path or not self.eval_path:
                raise ConfigError("csv datasets need train_path and eval_path")
            if self.schema is None:
                raise ConfigError("csv datasets need a column schema")

    def to_dict(self) -> dict:
        d = {"source": self.source, "dataset_seed": self.dataset_seed}
        if self.source == "synthetic":
            d["synthetic"] = self.synthetic.to_dict()
        else:
            d.update({
                "train_path": self.train_path,
                "eval_path": self.eval_path,
                "dev_path": self.dev_path,
                "schema": {
                    "label_col": self.schema.label_col,
                    "text_cols": list(self.schema.text_cols),
                    "n_classes": self.schema.n_classes,
                    "delimiter": self.schema.delimiter,
                    "label_base": self.schema.label_base,
                },
            })
        return d


@dataclass
class ExperimentConfig:
    """Complete description of one run; the report echoes all of it."""

    model: ModelConfig = field(default_factory=ModelConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seed: int = 0
    data_seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "distill": self.distill.to_dict(),
            "train": self.train.to_dict(),
            "dataset": self.dataset.to_dict(),
            "seed": self.seed,
            "data_seed": self.data_seed,
        }


def build_task(config: ExperimentConfig) -> TaskData:
    ds = config.dataset
    if ds.source == "synthetic":
        splits = make_synthetic(ds.synthetic, ds.dataset_seed)
    else:
        splits = {
            "train": load_csv(ds.train_path, ds.schema, role="train"),
            "test": load_csv(ds.eval_path, ds.schema, role="test"),
        }
        if ds.dev_path:
            splits["dev"] = load_csv(ds.dev_path, ds.schema, role="dev")
    return prepare_task(splits, vocab_size=config.model.vocab_size)


def evaluate(params: ParameterSet, split, vocab, config: ModelConfig,
             batch_size: int = 64):
    """(accuracy, error) on a split; eval mode, deterministic."""
    return evaluate_params(params, config, split, vocab, batch_size)


def run_experiment(config: ExperimentConfig, task: TaskData | None = None,
                   checkpoint_dir=None) -> TrainResult:
    """Fine-tune once and return the result with its report.

    Builds the task from the dataset config unless one is passed in (sweeps
    share a single immutable task across cells).
    """
    if task is None:
        task = build_task(config)
    result = fine_tune(config.model, config.distill, config.train, task,
                       seed=config.seed, data_seed=config.data_seed,
                       checkpoint_dir=checkpoint_dir)
    result.report.config["dataset"] = config.dataset.to_dict()
    return result


@dataclass
class EnsembleReport:
    """Per-member reports plus voted/averaged ensemble test metrics."""

    member_reports: list[RunReport]
    voted: dict
    averaged: dict
    individual: list[dict]

    def to_dict(self) -> dict:
        return {
            "members": [r.to_dict() for r in self.member_reports],
            "voted": self.voted,
            "averaged": self.averaged,
            "individual": self.individual,
        }


def ensemble_experiment(config: ExperimentConfig, n_models: int,
                        seeds: list[int]) -> EnsembleReport:
    """Fine-tune n models from different seeds; evaluate voting and averaging."""
    if n_models < 1:
        raise ConfigError("n_models must be >= 1")
    if len(seeds) != n_models:
        raise ConfigError(f"need {n_models} seeds, got {len(seeds)}")
    task = build_task(config)
    members: list[ParameterSet] = []
    reports: list[RunReport] = []
    individual: list[dict] = []
    for s in seeds:
        result = fine_tune(config.model, config.distill, config.train, task,
                           seed=s, data_seed=s)
        members.append(result.student)
        reports.append(result.report)
        individual.append(result.report.final_student)

    ens = EnsembleSet(members)
    correct = 0
    test = task.test
    for batch in iter_batches(test, task.vocab, config.model.max_len,
                              config.train.eval_batch_size):
        _, labels = voted_predict(ens, batch, config.model)
        correct += int((labels == batch.labels).sum())
    voted_acc = correct / len(test)
    voted = {"test_accuracy": voted_acc, "test_error": 1.0 - voted_acc}

    avg_params = average_parameters(members)
    avg_acc, avg_err = evaluate_params(avg_params, config.model, test,
                                       task.vocab, config.train.eval_batch_size)
    averaged = {"test_accuracy": avg_acc, "test_error": avg_err}
    return EnsembleReport(member_reports=reports, voted=voted,
                          averaged=averaged, individual=individual)


def sweep(base_config: ExperimentConfig, axis: str, grid: list,
          seeds: list[int]) -> SweepTable:
    """One run per (grid cell, seed); cell metric is the mean over seeds.

    A diverged run marks its cell entry failed with a diagnostic and the
    sweep continues.
    """
    if axis not in ("lambda", "k"):
        raise ConfigError(f"sweep axis must be 'lambda' or 'k', got {axis!r}")
    if not grid or not seeds:
        raise ConfigError("sweep needs a non-empty grid and seed list")
    task = build_task(base_config)
    table = SweepTable(axis=axis, grid=list(grid), seeds=list(seeds))
    for value in grid:
        dc = base_config.distill
        mode = dc.mode if dc.mode != "baseline" else "sda"
        try:
            if axis == "lambda":
                distill = DistillConfig(mode=mode, lam=float(value),
                                        teacher_size=dc.teacher_size,
                                        snapshot_every=dc.snapshot_every)
            else:
                size = value if value == "all" else int(value)
                distill = DistillConfig(mode=mode, lam=dc.lam,
                                        teacher_size=size,
                                        snapshot_every=dc.snapshot_every)
        except SelfDistillError as exc:
            table.cells[str(value)] = {"failed": str(exc), "per_seed": {}}
            continue
        per_seed: dict = {}
        errors, accuracies = [], []
        for s in seeds:
            try:
                result = fine_tune(base_config.model, distill,
                                   base_config.train, task, seed=s,
                                   data_seed=s)
                final = result.report.final_student
                per_seed[str(s)] = final
                errors.append(final["test_error"])
                accuracies.append(final["test_accuracy"])
            except SelfDistillError as exc:
                per_seed[str(s)] = {"failed": str(exc)}
        cell = {"per_seed": per_seed}
        if errors:
            cell["mean_test_error"] = float(np.mean(errors))
            cell["mean_test_accuracy"] = float(np.mean(accuracies))
        else:
            cell["failed"] = "all seeds failed"
        table.cells[str(value)] = cell
    return table


def stability_study(config: ExperimentConfig, data_order_seeds: list[int],
                    fixed_init_seed: int,
                    strategies=None) -> list[StabilityResult]:
    """Vary only the data order over a fixed initialization, per strategy."""
    if len(data_order_seeds) < 2:
        raise ConfigError("stability study needs at least 2 data-order seeds")
    task = build_task(config)
    results = []
    if strategies is None:
        strategies = stability_strategies(config.distill.lam)
    for name, distill in strategies:
        accs = []
        for ds in data_order_seeds:
            result = fine_tune(config.model, distill, config.train, task,
                               seed=fixed_init_seed, data_seed=ds)
            accs.append(result.report.final_student["test_accuracy"])
        results.append(StabilityResult.from_accuracies(
            strategy=name, data_seeds=list(data_order_seeds), accuracies=accs))
    return results


# ---------------------------------------------------------------------------
# Emission: canonical JSON + flat curve CSVs
# ---------------------------------------------------------------------------


def _write_lines(path: Path, lines: list[str]) -> None:
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def emit_report(obj, out_dir, fmt: str = "json") -> list[Path]:
    """Write a report object under ``out_dir``; returns the file paths.

    RunReports produce report.json plus curves_epoch.csv / curves_step.csv
    (separate CE and MSE columns); sweeps and stability results produce a
    single JSON document.
    """
    if fmt != "json":
        raise ConfigError(f"unsupported report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if isinstance(obj, TrainResult):
        obj = obj.report
    if isinstance(obj, RunReport):
        path = out / "report.json"
        save_json(obj.to_dict(), path)
        written.append(path)
        epoch_lines = ["epoch,test_error,test_accuracy,mean_ce,mean_mse,lr"]
        epoch_lines += [
            f"{p.epoch},{p.test_error!r},{p.test_accuracy!r},"
            f"{p.mean_ce!r},{p.mean_mse!r},{p.lr!r}"
            for p in obj.epoch_curve
        ]
        step_lines = ["step,ce,mse,lr"]
        step_lines += [
            f"{p.step},{p.ce!r},{p.mse!r},{p.lr!r}" for p in obj.step_curve
        ]
        epoch_path = out / "curves_epoch.csv"
        step_path = out / "curves_step.csv"
        _write_lines(epoch_path, epoch_lines)
        _write_lines(step_path, step_lines)
        written += [epoch_path, step_path]
    elif isinstance(obj, SweepTable):
        path = out / "sweep.json"
        save_json(obj.to_dict(), path)
        written.append(path)
    elif isinstance(obj, EnsembleReport):
        path = out / "ensemble.json"
        save_json(obj.to_dict(), path)
        written.append(path)
    elif isinstance(obj, list) and all(isinstance(r, StabilityResult) for r in obj):
        path = out / "stability.json"
        save_json({"strategies": [r.to_dict() for r in obj]}, path)
        written.append(path)
    else:
        raise ConfigError(f"emit_report: unsupported object {type(obj).__name__}")
    return written


def load_report(path) -> RunReport:
    return RunReport.from_dict(load_json(path))


# ---------------------------------------------------------------------------
# Rendering stored reports as text summaries
# ---------------------------------------------------------------------------


def relative_error_change(baseline_error: float, error: float) -> float:
    """Relative error reduction vs a baseline (positive = improvement)."""
    if baseline_error == 0.0:
        return 0.0
    return (baseline_error - error) / baseline_error


def render_summary(path, baseline_path=None) -> str:
    """Human-readable table for a stored report directory or file."""
    p = Path(path)
    if p.is_dir():
        for candidate in ("report.json", "sweep.json", "stability.json",
                          "ensemble.json"):
            if (p / candidate).exists():
                p = p / candidate
                break
        else:
            raise InputError(f"{path}: no report files found")
    doc = load_json(p)
    lines = [f"# {p}"]
    if "epoch_curve" in doc:
        lines.append("epoch  test_err  test_acc  mean_ce   mean_mse  lr")
        for pt in doc["epoch_curve"]:
            lines.append(
                f"{pt['epoch']:>5d}  {pt['test_error']:.4f}    {pt['test_accuracy']:.4f}"
                f"    {pt['mean_ce']:.4f}    {pt['mean_mse']:.4f}  {pt['lr']:.2e}"
            )
        fs = doc.get("final_student") or {}
        if fs:
            lines.append(f"final student: error={fs['test_error']:.4f} "
                         f"accuracy={fs['test_accuracy']:.4f}")
        ft = doc.get("final_teacher")
        if ft:
            lines.append(f"final teacher: error={ft['test_error']:.4f} "
                         f"accuracy={ft['test_accuracy']:.4f}")
        if baseline_path is not None:
            base = load_json(Path(baseline_path) / "report.json"
                             if Path(baseline_path).is_dir() else baseline_path)
            be = (base.get("final_student") or {}).get("test_error")
            if be is not None and fs:
                delta = relative_error_change(be, fs["test_error"])
                lines.append(f"relative error change vs baseline: {delta:+.2%}")
    elif "cells" in doc:
        lines.append(f"axis: {doc['axis']}   seeds: {doc['seeds']}")
        lines.append("cell        mean_test_error  mean_test_accuracy")
        for value in doc["grid"]:
            cell = doc["cells"][str(value)]
            if "failed" in cell:
                lines.append(f"{value!s:<10}  FAILED: {cell['failed']}")
            else:
                lines.append(f"{value!s:<10}  {cell['mean_test_error']:.4f}"
                             f"           {cell['mean_test_accuracy']:.4f}")
    elif "strategies" in doc:
        lines.append("strategy    mean     std      min      max")
        for s in doc["strategies"]:
            m = s["summary"]
            lines.append(f"{s['strategy']:<10}  {m['mean']:.4f}   {m['std']:.4f}"
                         f"   {m['min']:.4f}   {m['max']:.4f}")
    elif "voted" in doc:
        lines.append("member final test errors: " + ", ".join(
            f"{m['test_error']:.4f}" for m in doc["individual"]))
        lines.append(f"voted    : error={doc['voted']['test_error']:.4f}")
        lines.append(f"averaged : error={doc['averaged']['test_error']:.4f}")
    return "\n".join(lines)
