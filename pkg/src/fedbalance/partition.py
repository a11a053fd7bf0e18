"""Splitting a central dataset across virtual clients, IID or label-skewed.

Label skew follows the usual recipe: for each class, draw one set of
per-client proportions from a Dirichlet distribution (via normalized Gamma
draws) and hand out that class's examples by largest-remainder rounding, so
shard histograms always sum exactly to the central histogram.  Lower
concentration means stronger skew.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, LabeledExample
from .rng import RngStream

PARTITION_MODES = ("iid", "dirichlet")


@dataclass(frozen=True)
class PartitionSpec:
    """How to spread the central dataset over num_clients shards."""

    num_clients: int
    mode: str
    alphas: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.mode not in PARTITION_MODES:
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet":
            if self.alphas is None or len(self.alphas) != self.num_clients:
                raise ValueError("dirichlet mode needs one alpha per client")
            if any(a <= 0 for a in self.alphas):
                raise ValueError("all alphas must be > 0")

    @staticmethod
    def iid(num_clients: int) -> "PartitionSpec":
        return PartitionSpec(num_clients, "iid")

    @staticmethod
    def dirichlet(num_clients: int, alpha) -> "PartitionSpec":
        """Scalar alpha is broadcast to every client."""
        if np.isscalar(alpha):
            alphas = (float(alpha),) * num_clients
        else:
            alphas = tuple(float(a) for a in alpha)
        return PartitionSpec(num_clients, "dirichlet", alphas)


@dataclass(frozen=True, eq=False)
class ClientShard:
    """One client's local view of the training data."""

    client_id: int
    examples: tuple[LabeledExample, ...]
    label_histogram: np.ndarray
    indices: tuple[int, ...]  # positions in the central dataset

    def __len__(self) -> int:
        return len(self.examples)


def make_shard(
    client_id: int, ds: LabeledDataset, indices, num_classes: int
) -> ClientShard:
    indices = tuple(int(i) for i in indices)
    examples = tuple(ds.examples[i] for i in indices)
    labels = np.fromiter((ex.label for ex in examples), dtype=np.int64, count=len(examples))
    hist = np.bincount(labels, minlength=num_classes)
    return ClientShard(client_id, examples, hist, indices)


def sample_dirichlet(alphas, rng: RngStream) -> np.ndarray:
    """One point on the simplex via normalized independent Gamma(alpha_i, 1) draws."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.size < 1:
        raise ValueError("need at least one alpha")
    if (alphas <= 0).any():
        raise ValueError("all alphas must be > 0")
    gen = rng.generator()
    return _draw_proportions(alphas, gen)


def _draw_proportions(alphas: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    draws = gen.gamma(alphas)
    total = draws.sum()
    while total <= 0.0:  # all-underflow guard for very small alphas
        draws = gen.gamma(alphas)
        total = draws.sum()
    return draws / total


def dirichlet_log_density(x, alphas) -> float:
    """Log density of the Dirichlet distribution at a simplex point."""
    x = np.asarray(x, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if x.shape != alphas.shape:
        raise ValueError("x and alphas must have the same length")
    if (alphas <= 0).any():
        raise ValueError("all alphas must be > 0")
    if (x < 0).any() or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError("x is not on the simplex")
    if ((x == 0) & (alphas < 1)).any():
        raise ValueError("density diverges: x_i = 0 with alpha_i < 1")

    log_b = sum(math.lgamma(a) for a in alphas) - math.lgamma(float(alphas.sum()))
    total = -log_b
    for xi, ai in zip(x, alphas):
        if ai == 1.0:
            continue  # (a-1) * log x = 0 even at x = 0
        total += (ai - 1.0) * (math.log(xi) if xi > 0 else -math.inf)
    return total


def largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` by proportions; remainders to the largest
    fractional parts, ties to the lowest index.  Sums exactly to `total`."""
    exact = proportions * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition(ds: LabeledDataset, spec: PartitionSpec, rng: RngStream) -> list[ClientShard]:
    """Disjoint client shards whose union is the input dataset."""
    n = len(ds)
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    gen = rng.generator()
    k = spec.num_clients

    if spec.mode == "iid":
        if k > n:
            raise ValueError(f"cannot deal {n} examples to {k} clients")
        order = gen.permutation(n)
        chunks = np.array_split(order, k)
        return [make_shard(cid, ds, chunk, ds.num_classes) for cid, chunk in enumerate(chunks)]

    labels = np.fromiter((ex.label for ex in ds.examples), dtype=np.int64, count=n)
    alphas = np.asarray(spec.alphas, dtype=np.float64)
    per_client: list[list[int]] = [[] for _ in range(k)]
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        proportions = _draw_proportions(alphas, gen)
        counts = largest_remainder_counts(proportions, idx.size)
        shuffled = gen.permutation(idx)
        start = 0
        for cid in range(k):
            per_client[cid].extend(shuffled[start : start + counts[cid]].tolist())
            start += counts[cid]
    return [make_shard(cid, ds, per_client[cid], ds.num_classes) for cid in range(k)]


def shard_statistics(shards: list[ClientShard]) -> tuple[list[str], list[list[int]]]:
    """Per-client label histograms and totals as a CSV-ready (header, rows) pair."""
    num_classes = max((len(s.label_histogram) for s in shards), default=0)
    header = ["client_id"] + [f"label_{c}" for c in range(num_classes)] + ["total"]
    rows = []
    for s in shards:
        counts = [int(v) for v in s.label_histogram]
        rows.append([s.client_id] + counts + [int(sum(counts))])
    return header, rows
