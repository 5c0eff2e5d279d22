"""Self-distillation trainers and the plain fine-tuning loop they extend.

Three modes share one loop:

* ``baseline`` — cross-entropy only.
* ``sda`` — the teacher is the parameter average of recent student
  snapshots (a sliding window of size K, or a running mean over the whole
  trajectory when ``teacher_size="all"``); the loss adds
  ``lambda * MSE(student_logits, teacher_logits)``.
* ``sdv`` — the teacher signal is the mean of the logits produced by the K
  retained snapshots on the current batch.

The teacher is always evaluated without dropout and off the tape, so it is
a constant with respect to the student's gradients. Snapshot containers are
seeded with the initial parameters, which makes a teacher available from
the very first step (and makes the MSE term exactly zero there when
dropout is off).

Snapshot absorption happens right after each optimizer step, so during the
step that produces theta_t the window holds theta_{t-1}..theta_{t-K}. The
k=1 entry is the parameter vector currently in hand: with dropout disabled,
K=1 distillation reduces to the plain run exactly, and with dropout enabled
it acts as a consistency regularizer against the clean-forward logits.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import TaskData, iter_batches, permutation_with_seed
from .encoder import (
    ModelConfig,
    ParameterSet,
    classify,
    init_params,
    predict_proba,
    save_params,
)
from .ensemble import (
    CheckpointRing,
    RunningMean,
    ring_push,
    running_mean_update,
    window_mean,
)
from .errors import ConfigError, DivergenceError, InputError, UsageError
from .optim import OptimState, accumulate, adamw_step, lr_at
from .reporting import EpochPoint, RunReport, StepPoint

TEACHER_ALL = "all"


@dataclass(frozen=True)
class DistillConfig:
    """Strategy selector: mode, distillation weight, teacher size."""

    mode: str = "baseline"            # baseline | sda | sdv
    lam: float = 1.0
    teacher_size: int | str = 1       # K >= 1, or "all" (sda only)
    snapshot_every: int = 1

    def __post_init__(self):
        if self.mode not in ("baseline", "sda", "sdv"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.lam < 0.0:
            raise ConfigError(f"distillation weight must be >= 0, got {self.lam}")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if isinstance(self.teacher_size, str):
            if self.teacher_size != TEACHER_ALL:
                raise ConfigError(f"teacher_size {self.teacher_size!r} not understood")
            if self.mode == "sdv":
                raise ConfigError('teacher_size="all" is only valid for sda')
        elif self.teacher_size < 1:
            raise ConfigError(f"teacher_size must be >= 1, got {self.teacher_size}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "lam": self.lam,
            "teacher_size": self.teacher_size,
            "snapshot_every": self.snapshot_every,
        }


@dataclass(frozen=True)
class TrainConfig:
    """Protocol knobs: epochs, batching, schedule, optimizer."""

    epochs: int = 4
    micro_batch: int = 8
    accum_steps: int = 2
    lr_encoder: float = 1e-3
    lr_head: float = 5e-2     # keeps the 50x head:encoder ratio
    warmup_prop: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    eval_batch_size: int = 64
    select_by: str = "final"    # final | best_dev

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.micro_batch < 1 or self.accum_steps < 1:
            raise ConfigError("micro_batch and accum_steps must be >= 1")
        if self.select_by not in ("final", "best_dev"):
            raise ConfigError(f"select_by {self.select_by!r} not understood")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "micro_batch": self.micro_batch,
            "accum_steps": self.accum_steps, "lr_encoder": self.lr_encoder,
            "lr_head": self.lr_head, "warmup_prop": self.warmup_prop,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay,
            "eval_batch_size": self.eval_batch_size, "select_by": self.select_by,
        }


@dataclass
class TrainState:
    """Mutable state of one run: student, optimizer, teacher, rng streams."""

    model_config: ModelConfig
    distill_config: DistillConfig
    train_config: TrainConfig
    params: ParameterSet
    opt: OptimState
    dropout_rng: np.random.Generator
    step: int = 0                      # optimizer steps completed
    ring: CheckpointRing | None = None
    rmean: RunningMean | None = None
    pending: list = field(default_factory=list)
    counters: dict = field(default_factory=lambda: {
        "student_forwards": 0, "teacher_forwards": 0,
    })


@dataclass
class StepMetrics:
    ce: float
    mse: float
    lr: float
    stepped: bool


@dataclass
class TrainResult:
    student: ParameterSet
    teacher: ParameterSet | None
    report: RunReport


def make_train_state(model_config: ModelConfig, distill_config: DistillConfig,
                     train_config: TrainConfig, n_train: int, seed: int) -> TrainState:
    params = init_params(model_config, seed)
    micro_per_epoch = math.ceil(n_train / train_config.micro_batch) if n_train else 0
    steps_per_epoch = math.ceil(micro_per_epoch / train_config.accum_steps)
    total_steps = max(1, steps_per_epoch * train_config.epochs)
    opt = OptimState.init(
        params,
        total_steps=total_steps,
        lr_encoder=train_config.lr_encoder,
        lr_head=train_config.lr_head,
        warmup_prop=train_config.warmup_prop,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.eps,
        weight_decay=train_config.weight_decay,
    )
    state = TrainState(
        model_config=model_config,
        distill_config=distill_config,
        train_config=train_config,
        params=params,
        opt=opt,
        dropout_rng=np.random.default_rng([seed, 1]),
    )
    if distill_config.mode == "sda" and distill_config.teacher_size == TEACHER_ALL:
        state.rmean = running_mean_update(RunningMean(), params)
    elif distill_config.mode in ("sda", "sdv"):
        state.ring = CheckpointRing(int(distill_config.teacher_size))
        ring_push(state.ring, params.copy())
    return state


def sda_teacher(state: TrainState) -> ParameterSet:
    """Parameter-averaged teacher over past snapshots (current step excluded)."""
    if state.distill_config.mode != "sda":
        raise UsageError("sda_teacher is only defined in sda mode")
    if state.distill_config.teacher_size == TEACHER_ALL:
        return state.rmean.mean
    return window_mean(state.ring)


def sdv_teacher_logits(state: TrainState, batch) -> Tensor:
    """Mean of the retained snapshots' logits on this batch; a constant."""
    if state.ring is None or len(state.ring) == 0:
        raise UsageError("sdv teacher ring is empty")
    outs = []
    for snap in state.ring.snapshots():
        outs.append(classify(snap, batch, state.model_config, train_mode=False).data)
        state.counters["teacher_forwards"] += 1
    return Tensor(np.mean(np.stack(outs, axis=0), axis=0))


def sda_loss(student_logits: Tensor, teacher_logits: Tensor, labels,
             lam: float):
    """CE against gold labels plus lam * MSE against the frozen teacher.

    Returns (total, ce, mse) tensors; the components always satisfy
    total == ce + lam * mse.
    """
    if lam < 0.0:
        raise UsageError(f"distillation weight must be >= 0, got {lam}")
    if student_logits.data.shape != teacher_logits.data.shape:
        raise UsageError(
            f"student/teacher logit shapes differ: "
            f"{student_logits.data.shape} vs {teacher_logits.data.shape}"
        )
    if teacher_logits.tape is not None and teacher_logits.tape._open:
        raise UsageError("teacher logits must be constant (not on an open tape)")
    ce = ad.cross_entropy(student_logits, labels)
    m = ad.mse(student_logits, teacher_logits)
    total = ad.add(ce, ad.mul(m, lam))
    return total, ce, m


def train_step(state: TrainState, batch, force_flush: bool = False) -> StepMetrics:
    """One micro-batch: teacher signal, forward, loss, backward, accumulate.

    On an accumulation boundary (or ``force_flush`` at epoch end) the
    averaged gradients feed one AdamW step and the fresh parameters are
    absorbed into the teacher state.
    """
    cfg = state.distill_config
    tape = Tape()

    teacher_logits = None
    if cfg.mode == "sda":
        teacher = sda_teacher(state)
        teacher_logits = classify(teacher, batch, state.model_config,
                                  train_mode=False)
        state.counters["teacher_forwards"] += 1
    elif cfg.mode == "sdv":
        teacher_logits = sdv_teacher_logits(state, batch)

    student_logits = classify(state.params, batch, state.model_config,
                              train_mode=True, tape=tape, rng=state.dropout_rng)
    state.counters["student_forwards"] += 1

    if cfg.mode == "baseline":
        total = ad.cross_entropy(student_logits, batch.labels)
        ce_val, mse_val = total.item(), 0.0
    else:
        total, ce, m = sda_loss(student_logits, teacher_logits, batch.labels,
                                cfg.lam)
        ce_val, mse_val = ce.item(), m.item()

    if not np.isfinite(total.item()):
        raise DivergenceError(
            f"non-finite loss at optimizer step {state.step} "
            f"(ce={ce_val}, mse={mse_val})"
        )

    grads = ad.backward(total, tape)
    state.pending.append({name: grads[t] for name, t in state.params.items()})

    stepped = False
    lr = lr_at(min(state.opt.t + 1, state.opt.total_steps), state.opt.total_steps,
               state.opt.lr_encoder, state.opt.warmup_prop)
    if len(state.pending) >= state.train_config.accum_steps or force_flush:
        mean_grads = accumulate(state.pending, len(state.pending))
        lr = adamw_step(state.params, mean_grads, state.opt)
        state.pending.clear()
        state.step += 1
        stepped = True
        if cfg.mode in ("sda", "sdv") and state.step % cfg.snapshot_every == 0:
            snapshot = state.params.copy()
            if cfg.mode == "sda" and cfg.teacher_size == TEACHER_ALL:
                running_mean_update(state.rmean, snapshot)
            else:
                ring_push(state.ring, snapshot)
    return StepMetrics(ce=ce_val, mse=mse_val, lr=lr, stepped=stepped)


def evaluate_params(params: ParameterSet, config: ModelConfig, split, vocab,
                    batch_size: int = 64):
    """(accuracy, error) on a split, eval mode, fixed-width batches."""
    if len(split) == 0:
        raise InputError("evaluate: empty split")
    correct = 0
    for batch in iter_batches(split, vocab, config.max_len, batch_size):
        probs = predict_proba(params, batch, config)
        correct += int((np.argmax(probs, axis=1) == batch.labels).sum())
    accuracy = correct / len(split)
    return accuracy, 1.0 - accuracy


def fine_tune(model_config: ModelConfig, distill_config: DistillConfig,
              train_config: TrainConfig, task: TaskData, seed: int,
              data_seed: int | None = None,
              checkpoint_dir=None) -> TrainResult:
    """Run E epochs of shuffled micro-batches; report per-epoch curves.

    ``seed`` fixes initialization and dropout; ``data_seed`` (defaulting to
    ``seed``) fixes the per-epoch training permutation. The returned report
    carries the final student metrics and, in sda mode, the final teacher's.
    With ``checkpoint_dir`` set, the student is checkpointed at every epoch
    boundary as ``epoch_NNN.ckpt``.
    """
    if len(task.train) == 0:
        raise InputError("fine_tune: empty train split")
    if train_config.epochs > 0 and ("test" not in task.splits
                                    or len(task.test) == 0):
        raise InputError("fine_tune: empty test split")
    data_seed = seed if data_seed is None else data_seed
    started = time.perf_counter()

    state = make_train_state(model_config, distill_config, train_config,
                             n_train=len(task.train), seed=seed)
    vocab = task.vocab
    epoch_curve: list[EpochPoint] = []
    step_curve: list[StepPoint] = []
    micro_index = 0
    best_dev_acc, best_params, best_epoch = -1.0, None, None

    n_train = len(task.train)
    micro_per_epoch = math.ceil(n_train / train_config.micro_batch)
    for epoch in range(train_config.epochs):
        order = permutation_with_seed(n_train, [data_seed, epoch])
        ce_sum, mse_sum, n_micro = 0.0, 0.0, 0
        for i, batch in enumerate(iter_batches(task.train, vocab,
                                               model_config.max_len,
                                               train_config.micro_batch, order)):
            metrics = train_step(state, batch,
                                 force_flush=(i == micro_per_epoch - 1))
            step_curve.append(StepPoint(step=micro_index, ce=metrics.ce,
                                        mse=metrics.mse, lr=metrics.lr))
            ce_sum += metrics.ce
            mse_sum += metrics.mse
            n_micro += 1
            micro_index += 1
        test_acc, test_err = evaluate_params(state.params, model_config,
                                             task.test, vocab,
                                             train_config.eval_batch_size)
        epoch_curve.append(EpochPoint(
            epoch=epoch,
            test_error=test_err,
            test_accuracy=test_acc,
            mean_ce=ce_sum / max(n_micro, 1),
            mean_mse=mse_sum / max(n_micro, 1),
            lr=lr_at(min(state.opt.t, state.opt.total_steps),
                     state.opt.total_steps, state.opt.lr_encoder,
                     state.opt.warmup_prop),
        ))
        if task.dev is not None and len(task.dev) > 0:
            dev_acc, _ = evaluate_params(state.params, model_config, task.dev,
                                         vocab, train_config.eval_batch_size)
            if dev_acc > best_dev_acc:
                best_dev_acc, best_epoch = dev_acc, epoch
                best_params = state.params.copy()
        if checkpoint_dir is not None:
            out = Path(checkpoint_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_params(state.params, out / f"epoch_{epoch:03d}.ckpt")

    student = state.params
    selected_epoch = None
    if (train_config.select_by == "best_dev" and best_params is not None):
        student = best_params
        selected_epoch = best_epoch

    teacher = None
    if distill_config.mode == "sda" and train_config.epochs > 0:
        teacher = sda_teacher(state).copy()

    final_student = {}
    final_teacher = None
    if train_config.epochs > 0:
        acc, err = evaluate_params(student, model_config, task.test, vocab,
                                   train_config.eval_batch_size)
        final_student = {"test_accuracy": acc, "test_error": err}
        if teacher is not None:
            tacc, terr = evaluate_params(teacher, model_config, task.test,
                                         vocab, train_config.eval_batch_size)
            final_teacher = {"test_accuracy": tacc, "test_error": terr}

    report = RunReport(
        config={
            "model": model_config.to_dict(),
            "distill": distill_config.to_dict(),
            "train": train_config.to_dict(),
        },
        seeds={"seed": seed, "data_seed": data_seed},
        epoch_curve=epoch_curve,
        step_curve=step_curve,
        final_student=final_student,
        final_teacher=final_teacher,
        counters=dict(state.counters),
        wall_clock_s=time.perf_counter() - started,
    )
    if selected_epoch is not None:
        report.config["selected_epoch"] = selected_epoch
    return TrainResult(student=student, teacher=teacher, report=report)
