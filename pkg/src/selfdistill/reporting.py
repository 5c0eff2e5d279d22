"""Report containers exchanged between training runs and the harness.

Serialized reports are canonical JSON (sorted keys, fixed separators) so a
rerun with identical configs and seeds reproduces byte-identical files.
Volatile fields (wall-clock) are deliberately excluded from serialization
and live only on the in-memory object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class EpochPoint:
    epoch: int
    test_error: float
    test_accuracy: float
    mean_ce: float
    mean_mse: float
    lr: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch, "test_error": self.test_error,
            "test_accuracy": self.test_accuracy, "mean_ce": self.mean_ce,
            "mean_mse": self.mean_mse, "lr": self.lr,
        }


@dataclass
class StepPoint:
    step: int
    ce: float
    mse: float
    lr: float

    def to_dict(self) -> dict:
        return {"step": self.step, "ce": self.ce, "mse": self.mse, "lr": self.lr}


@dataclass
class RunReport:
    """Everything one training run reports.

    ``wall_clock_s`` is in-memory only; ``counters`` (forward-pass counts)
    are deterministic and serialized.
    """

    config: dict
    seeds: dict
    epoch_curve: list[EpochPoint] = field(default_factory=list)
    step_curve: list[StepPoint] = field(default_factory=list)
    final_student: dict = field(default_factory=dict)
    final_teacher: dict | None = None
    counters: dict = field(default_factory=dict)
    wall_clock_s: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "epoch_curve": [p.to_dict() for p in self.epoch_curve],
            "step_curve": [p.to_dict() for p in self.step_curve],
            "final_student": self.final_student,
            "final_teacher": self.final_teacher,
            "counters": self.counters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            config=d["config"],
            seeds=d["seeds"],
            epoch_curve=[EpochPoint(**p) for p in d["epoch_curve"]],
            step_curve=[StepPoint(**p) for p in d["step_curve"]],
            final_student=d["final_student"],
            final_teacher=d["final_teacher"],
            counters=d["counters"],
        )


@dataclass
class SweepTable:
    """Grid sweep results: one cell per axis value, averaged over seeds."""

    axis: str                       # "lambda" | "k"
    grid: list                      # axis values in run order
    seeds: list[int]
    cells: dict = field(default_factory=dict)
    # cells[str(value)] = {"mean_test_error":…, "mean_test_accuracy":…,
    #                      "per_seed": {...}, "failed": {...}}

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "grid": self.grid,
            "seeds": self.seeds,
            "cells": self.cells,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepTable":
        return cls(axis=d["axis"], grid=d["grid"], seeds=d["seeds"],
                   cells=d["cells"])


@dataclass
class StabilityResult:
    """Final accuracies over data-order seeds plus summary statistics."""

    strategy: str
    data_seeds: list[int]
    accuracies: list[float]
    summary: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, strategy: str, data_seeds: list[int],
                        accuracies: list[float]) -> "StabilityResult":
        arr = np.asarray(accuracies, dtype=np.float64)
        q1, q2, q3 = np.percentile(arr, [25, 50, 75])
        summary = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=0)),
            "min": float(arr.min()),
            "max": float(arr.max()),
            "q1": float(q1),
            "median": float(q2),
            "q3": float(q3),
        }
        return cls(strategy=strategy, data_seeds=list(data_seeds),
                   accuracies=[float(a) for a in accuracies], summary=summary)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "data_seeds": self.data_seeds,
            "accuracies": self.accuracies,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityResult":
        return cls(strategy=d["strategy"], data_seeds=d["data_seeds"],
                   accuracies=d["accuracies"], summary=d["summary"])


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def save_json(payload: dict, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(payload))
    except OSError as exc:
        raise InputError(f"cannot write report to {path}: {exc}") from exc


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read report from {path}: {exc}") from exc
