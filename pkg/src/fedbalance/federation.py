"""Round orchestration: client selection, count-exchange balancing, FedAvg.

One round: the server picks clients, optionally runs the balancing protocol
(clients report per-label counts, the server broadcasts per-label maxima,
each client synthesizes transformed images up to the targets), every selected
client trains from the same incoming global parameters, and updates are
aggregated by sample-count weights (or a plain mean).

Only per-label counts cross the client/server boundary during balancing;
the message records below model exactly that traffic and can be logged as
JSON lines for auditing.  Synthesized examples are ephemeral: they exist for
the round's training step and are never written back to the shard.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .augment import AugmentPlan, synthesize
from .data import Image, LabeledDataset, LabeledExample
from .metrics import RoundRecord, evaluate, global_objective, weight_divergence
from .model import (
    ArchSpec,
    ModelParams,
    OptimizerState,
    flatten_params,
    init_params,
    local_train,
    params_weighted_sum,
)
from .partition import ClientShard
from .rng import RngStream

log = logging.getLogger(__name__)

AGGREGATORS = ("fedavg", "simple_mean")
BALANCING_MODES = ("none", "augment")


@dataclass(frozen=True)
class FederationConfig:
    """Everything one federated run needs besides the data itself."""

    num_rounds: int
    clients_per_round: int
    local_epochs: int
    batch_size: int
    aggregator: str
    balancing: str
    optimizer: OptimizerState
    arch: ArchSpec
    master_seed: int

    def __post_init__(self) -> None:
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be >= 1")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.balancing not in BALANCING_MODES:
            raise ValueError(f"unknown balancing mode {self.balancing!r}")


@dataclass(frozen=True)
class CountsMsg:
    client_id: int
    histogram: tuple[int, ...]


@dataclass(frozen=True)
class TargetsMsg:
    targets: tuple[int, ...]


@dataclass(frozen=True)
class UpdateMsg:
    client_id: int
    n_k: int
    params: ModelParams


class ProtocolTrace:
    """JSON-lines sink for protocol messages; parameters are digested."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def log(self, round_id: int, msg) -> None:
        if isinstance(msg, CountsMsg):
            record = {
                "type": "counts",
                "round": round_id,
                "client_id": msg.client_id,
                "histogram": list(msg.histogram),
            }
        elif isinstance(msg, TargetsMsg):
            record = {"type": "targets", "round": round_id, "targets": list(msg.targets)}
        elif isinstance(msg, UpdateMsg):
            flat = flatten_params(msg.params)
            record = {
                "type": "update",
                "round": round_id,
                "client_id": msg.client_id,
                "n_k": msg.n_k,
                "params_sha256": hashlib.sha256(flat.tobytes()).hexdigest(),
                "params_l2": float(np.linalg.norm(flat)),
            }
        else:
            raise TypeError(f"unknown message type {type(msg).__name__}")
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ProtocolTrace":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class RoundOutcome:
    """What one round did, including balancing bookkeeping."""

    round_id: int
    selected: tuple[int, ...]
    pre_histograms: dict[int, tuple[int, ...]]
    post_histograms: dict[int, tuple[int, ...]]
    n_k: dict[int, int]
    skipped_labels: dict[int, tuple[int, ...]]
    params: ModelParams


def select_clients(shards: list[ClientShard], m: int, round_id: int, rng: RngStream):
    """m distinct clients drawn uniformly among nonempty shards."""
    eligible = np.array([s.client_id for s in shards if len(s) > 0], dtype=np.int64)
    if m > eligible.size:
        raise ValueError(f"cannot select {m} of {eligible.size} eligible clients")
    gen = rng.lane("select", round_id=round_id).generator()
    chosen = gen.choice(eligible, size=m, replace=False)
    return [int(c) for c in chosen]


def compute_balance_targets(histograms: list) -> np.ndarray:
    """Per-label maximum over the selected clients' histograms."""
    if not histograms:
        raise ValueError("need at least one histogram")
    stacked = np.asarray(histograms, dtype=np.int64)
    if stacked.ndim != 2:
        raise ValueError("histograms must share one length")
    return stacked.max(axis=0)


def balance_shard(
    shard: ClientShard, targets, rng: RngStream
) -> tuple[list[LabeledExample], np.ndarray, tuple[int, ...]]:
    """Original examples plus synthesized deficit fillers.

    Labels the client does not hold at all are skipped with a warning; the
    returned histogram reflects what was actually achieved.
    """
    targets = np.asarray(targets, dtype=np.int64)
    plan = AugmentPlan.from_targets(shard.label_histogram, targets)
    examples = list(shard.examples)
    post = shard.label_histogram.copy()
    skipped: list[int] = []
    pools: dict[int, list[Image]] = {}
    for ex in shard.examples:
        pools.setdefault(ex.label, []).append(ex.image)

    for label, deficit in plan.deficits:
        pool = pools.get(label)
        if not pool:
            log.warning(
                "client %d cannot synthesize label %d (no local examples); skipping",
                shard.client_id,
                label,
            )
            skipped.append(label)
            continue
        lane = rng.sublane(f"label{label}")
        for img in synthesize(pool, deficit, lane):
            examples.append(LabeledExample(img, label))
        post[label] += deficit
    return examples, post, tuple(skipped)


def aggregate(updates: list[tuple[ModelParams, int]], aggregator: str = "fedavg") -> ModelParams:
    """Combine client updates: FedAvg (n_k / n weights) or a simple mean."""
    if not updates:
        raise ValueError("need at least one update")
    if aggregator not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    params = [p for p, _ in updates]
    counts = np.array([n for _, n in updates], dtype=np.float64)
    if (counts < 1).any():
        raise ValueError("all n_k must be >= 1")
    if aggregator == "fedavg":
        weights = counts / counts.sum()
    else:
        weights = np.full(len(updates), 1.0 / len(updates))
    return params_weighted_sum(params, weights)


def run_round(
    global_params: ModelParams,
    shards: list[ClientShard],
    cfg: FederationConfig,
    round_id: int,
    trace: ProtocolTrace | None = None,
) -> RoundOutcome:
    """One communication round; every client trains from the same incoming params."""
    rng = RngStream(cfg.master_seed)
    selected = sorted(select_clients(shards, cfg.clients_per_round, round_id, rng))
    by_id = {s.client_id: s for s in shards}

    pre: dict[int, tuple[int, ...]] = {}
    post: dict[int, tuple[int, ...]] = {}
    skipped: dict[int, tuple[int, ...]] = {}
    train_sets: dict[int, list[LabeledExample]] = {}

    for cid in selected:
        pre[cid] = tuple(int(v) for v in by_id[cid].label_histogram)

    if cfg.balancing == "augment":
        msgs = [CountsMsg(cid, pre[cid]) for cid in selected]
        if trace is not None:
            for msg in msgs:
                trace.log(round_id, msg)
        targets = compute_balance_targets([m.histogram for m in msgs])
        if trace is not None:
            trace.log(round_id, TargetsMsg(tuple(int(t) for t in targets)))
        for cid in selected:
            balance_rng = rng.lane("balance", client_id=cid, round_id=round_id)
            examples, post_hist, skip = balance_shard(by_id[cid], targets, balance_rng)
            train_sets[cid] = examples
            post[cid] = tuple(int(v) for v in post_hist)
            skipped[cid] = skip
    else:
        for cid in selected:
            train_sets[cid] = list(by_id[cid].examples)
            post[cid] = pre[cid]
            skipped[cid] = ()

    updates: list[tuple[ModelParams, int]] = []
    for cid in selected:
        lane = rng.lane("train", client_id=cid, round_id=round_id)
        trained = local_train(
            global_params,
            train_sets[cid],
            cfg.local_epochs,
            cfg.batch_size,
            cfg.optimizer,
            lane,
        )
        msg = UpdateMsg(cid, len(train_sets[cid]), trained)
        if trace is not None:
            trace.log(round_id, msg)
        updates.append((msg.params, msg.n_k))

    new_global = aggregate(updates, cfg.aggregator)
    return RoundOutcome(
        round_id=round_id,
        selected=tuple(selected),
        pre_histograms=pre,
        post_histograms=post,
        n_k={cid: len(train_sets[cid]) for cid in selected},
        skipped_labels=skipped,
        params=new_global,
    )


def run_experiment(
    cfg: FederationConfig,
    shards: list[ClientShard],
    test_set: LabeledDataset,
    trace: ProtocolTrace | None = None,
    reference_loader=None,
    on_round=None,
) -> tuple[list[RoundRecord], ModelParams]:
    """Full run: init, rounds, per-round central evaluation.

    Row 0 records the freshly initialized model; row r the model after round
    r's aggregation.  `reference_loader(round_id)` may supply a centralized
    checkpoint for the divergence column; `on_round(outcome)` observes rounds.
    """
    rng = RngStream(cfg.master_seed)
    params = init_params(cfg.arch, rng.lane("init"))
    records = [_measure(params, shards, test_set, 0, reference_loader, 0.0)]
    for round_id in range(1, cfg.num_rounds + 1):
        started = time.perf_counter()
        outcome = run_round(params, shards, cfg, round_id, trace)
        params = outcome.params
        elapsed = time.perf_counter() - started
        if on_round is not None:
            on_round(outcome)
        records.append(_measure(params, shards, test_set, round_id, reference_loader, elapsed))
    return records, params


def _measure(params, shards, test_set, round_id, reference_loader, elapsed) -> RoundRecord:
    accuracy, loss = evaluate(params, test_set)
    objective = global_objective(params, shards)
    divergence = None
    if reference_loader is not None:
        reference = reference_loader(round_id)
        if reference is not None:
            divergence = weight_divergence(params, reference)
    return RoundRecord(
        round=round_id,
        test_accuracy=accuracy,
        test_loss=loss,
        global_objective=objective,
        weight_divergence=divergence,
        wall_time_s=elapsed,
    )
