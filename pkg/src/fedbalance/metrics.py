"""Global-model evaluation, objective tracking, divergence, CSV emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, stack_examples
from .model import ModelParams, _check_batch, _forward_trace, _log_softmax, flatten_params

METRICS_HEADER = [
    "round",
    "test_accuracy",
    "test_loss",
    "global_objective",
    "weight_divergence",
    "wall_time_s",
]


@dataclass(frozen=True)
class RoundRecord:
    """One metrics row per communication round."""

    round: int
    test_accuracy: float
    test_loss: float
    global_objective: float
    weight_divergence: float | None = None
    wall_time_s: float = 0.0


def _mean_loss_and_accuracy(params: ModelParams, images, labels) -> tuple[float, float]:
    images = _check_batch(params.arch, images)
    labels = np.asarray(labels, dtype=np.int64)
    logits, _ = _forward_trace(params, images)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, accuracy


def evaluate(params: ModelParams, test_set: LabeledDataset) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on a central test set.

    Argmax ties break toward the lowest class index.
    """
    if len(test_set) == 0:
        raise ValueError("test set must be nonempty")
    images, labels = test_set.stacked()
    loss, accuracy = _mean_loss_and_accuracy(params, images, labels)
    return accuracy, loss


def global_objective(params: ModelParams, shards, weights=None) -> float:
    """Weighted average of per-shard mean losses; default weights n_k / n.

    Empty shards carry zero weight and are skipped.
    """
    nonempty = [s for s in shards if len(s) > 0]
    if not nonempty:
        raise ValueError("global objective needs at least one nonempty shard")
    if weights is None:
        total = sum(len(s) for s in nonempty)
        weights = np.array([len(s) / total for s in nonempty], dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != len(nonempty):
            raise ValueError("one weight per nonempty shard required")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError("shard weights must sum to 1")

    value = 0.0
    for w, shard in zip(weights, nonempty):
        images, labels = stack_examples(shard.examples, params.arch.image_shape)
        loss, _ = _mean_loss_and_accuracy(params, images, labels)
        value += float(w) * loss
    return value


def weight_divergence(fed_params: ModelParams, reference_params: ModelParams) -> float:
    """Relative L2 distance ||w_fed - w_ref|| / ||w_ref|| over all tensors."""
    if fed_params.arch != reference_params.arch:
        raise ValueError("divergence requires identical architectures")
    fed = flatten_params(fed_params)
    ref = flatten_params(reference_params)
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0:
        raise ValueError("reference parameters have zero norm")
    return float(np.linalg.norm(fed - ref) / ref_norm)


def stability_stats(accuracies, window: int) -> float | None:
    """Population std of the trailing `window` accuracies; None if too few."""
    if window < 2:
        raise ValueError("window must be >= 2")
    values = list(accuracies)
    if len(values) < window:
        return None
    tail = np.asarray(values[-window:], dtype=np.float64)
    return float(tail.std())


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_metrics_csv(records, path, include_timing: bool = False) -> None:
    """One row per round, LF line endings; blank divergence/timing when absent."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(METRICS_HEADER) + "\n")
        for r in records:
            row = [
                str(r.round),
                _fmt(r.test_accuracy),
                _fmt(r.test_loss),
                _fmt(r.global_objective),
                _fmt(r.weight_divergence),
                _fmt(r.wall_time_s) if include_timing else "",
            ]
            f.write(",".join(row) + "\n")


def read_metrics_csv(path) -> list[RoundRecord]:
    """Parse a metrics CSV; malformed rows are rejected with their row number."""
    records: list[RoundRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValueError(f"row 1: expected header {','.join(METRICS_HEADER)}")
        for i, row in enumerate(reader, start=2):
            if len(row) != len(METRICS_HEADER):
                raise ValueError(f"row {i}: expected {len(METRICS_HEADER)} fields, got {len(row)}")
            try:
                records.append(
                    RoundRecord(
                        round=int(row[0]),
                        test_accuracy=float(row[1]),
                        test_loss=float(row[2]),
                        global_objective=float(row[3]),
                        weight_divergence=float(row[4]) if row[4] else None,
                        wall_time_s=float(row[5]) if row[5] else 0.0,
                    )
                )
            except ValueError as exc:
                raise ValueError(f"row {i}: {exc}") from None
    if not records:
        raise ValueError("metrics CSV has no data rows")
    return records
