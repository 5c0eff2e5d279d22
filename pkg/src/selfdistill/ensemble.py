"""Parameter- and prediction-combination machinery.

Covers the three ways this package combines models: probability voting over
independently trained models, elementwise parameter averaging, and the two
streaming teacher states used during self-distillation (a sliding window of
recent snapshots and a cumulative running mean over every snapshot).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import ModelConfig, ParameterSet, load_params, predict_proba, save_params
from .errors import InputError, ShapeError, UsageError


def average_parameters(sets: list[ParameterSet]) -> ParameterSet:
    """Elementwise arithmetic mean per named tensor."""
    if not sets:
        raise UsageError("average_parameters: empty list")
    first = sets[0]
    for other in sets[1:]:
        first.require_compatible(other)
    out = first.copy()
    for name in first:
        # pairwise summation via np.mean keeps the mean of 2^k identical
        # tensors bit-exact
        out[name].data[...] = np.mean(
            np.stack([s[name].data for s in sets], axis=0), axis=0
        )
    return out


@dataclass
class EnsembleSet:
    """K independently fine-tuned parameter sets sharing one ModelConfig."""

    members: list[ParameterSet]

    def __post_init__(self):
        if not self.members:
            raise UsageError("EnsembleSet needs at least one member")
        for other in self.members[1:]:
            if not self.members[0].compatible_with(other):
                raise ShapeError("ensemble members disagree in names or shapes")

    def __len__(self) -> int:
        return len(self.members)


def voted_predict(models: EnsembleSet, batch, config: ModelConfig):
    """Sum each model's class probabilities; predict the argmax of the sum.

    Returns (summed probabilities [B, C], predicted labels [B]). Ties break
    toward the lowest class index.
    """
    stacked = np.stack(
        [predict_proba(member, batch, config) for member in models.members], axis=0
    )
    total = stacked.sum(axis=0)
    labels = np.argmax(total, axis=1)
    return total, labels


class CheckpointRing:
    """FIFO buffer of the last K parameter snapshots.

    Eviction is strictly oldest-first; the insertion counter keeps counting
    across evictions.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise UsageError(f"ring capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buf: deque[ParameterSet] = deque()
        self.insertions = 0

    def __len__(self) -> int:
        return len(self._buf)

    def snapshots(self) -> list[ParameterSet]:
        return list(self._buf)


def ring_push(ring: CheckpointRing, snapshot: ParameterSet) -> CheckpointRing:
    """Append a snapshot, evicting the oldest entry once over capacity."""
    if ring._buf:
        ring._buf[0].require_compatible(snapshot)
    ring._buf.append(snapshot)
    ring.insertions += 1
    if len(ring._buf) > ring.capacity:
        ring._buf.popleft()
    return ring


def window_mean(ring: CheckpointRing) -> ParameterSet:
    """Mean over the currently held snapshots (fewer than K during warm-in)."""
    if not ring._buf:
        raise UsageError("window_mean: empty ring")
    return average_parameters(list(ring._buf))


@dataclass
class RunningMean:
    """Cumulative mean of every absorbed snapshot, updated in O(size)."""

    mean: ParameterSet | None = None
    count: int = 0


def running_mean_update(rm: RunningMean, snapshot: ParameterSet) -> RunningMean:
    """mean += (snapshot - mean) / (count + 1); count += 1."""
    if rm.mean is None:
        rm.mean = snapshot.copy()
        rm.count = 1
        return rm
    rm.mean.require_compatible(snapshot)
    new_count = rm.count + 1
    for name in rm.mean:
        m = rm.mean[name].data
        m += (snapshot[name].data - m) / new_count
    rm.count = new_count
    return rm


# ---------------------------------------------------------------------------
# Teacher-state serialization for resumable runs. A ring or running mean
# becomes a directory of parameter checkpoints plus a small meta file.
# ---------------------------------------------------------------------------


def save_ring(ring: CheckpointRing, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, snap in enumerate(ring.snapshots()):
        save_params(snap, out / f"snapshot_{i:03d}.ckpt")
    meta = {"kind": "ring", "capacity": ring.capacity,
            "insertions": ring.insertions, "held": len(ring)}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_ring(in_dir) -> CheckpointRing:
    src = Path(in_dir)
    try:
        meta = json.loads((src / "meta.json").read_text())
    except OSError as exc:
        raise InputError(f"{in_dir}: not a saved ring: {exc}") from exc
    if meta.get("kind") != "ring":
        raise InputError(f"{in_dir}: not a saved ring")
    ring = CheckpointRing(meta["capacity"])
    for i in range(meta["held"]):
        ring._buf.append(load_params(src / f"snapshot_{i:03d}.ckpt"))
    ring.insertions = meta["insertions"]
    return ring


def save_running_mean(rm: RunningMean, out_dir) -> None:
    if rm.mean is None:
        raise UsageError("cannot save an empty running mean")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(rm.mean, out / "mean.ckpt")
    meta = {"kind": "running_mean", "count": rm.count}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_running_mean(in_dir) -> RunningMean:
    src = Path(in_dir)
    try:
        meta = json.loads((src / "meta.json").read_text())
    except OSError as exc:
        raise InputError(f"{in_dir}: not a saved running mean: {exc}") from exc
    if meta.get("kind") != "running_mean":
        raise InputError(f"{in_dir}: not a saved running mean")
    return RunningMean(mean=load_params(src / "mean.ckpt"),
                       count=meta["count"])
