"""Synthetic data generation, label-based partitioning, CSV loading.

The synthetic generator is a desk-scale stand-in for real federated image
corpora: each class has a global Gaussian mean, each node perturbs the means
of the classes it holds by a node-specific offset scaled by the
heterogeneity knob, and samples add unit-scale noise. Restricting each node
to a fixed number of distinct classes reproduces the by-label non-i.i.d.
regime.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataFormatError
from .model import Batch

__all__ = [
    "Dataset",
    "PartitionSpec",
    "generate_synthetic",
    "partition_by_label",
    "assign_classes",
    "make_node_shards",
    "load_csv",
    "write_csv",
]


@dataclass
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have equal length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class PartitionSpec:
    n_nodes: int
    classes_per_node: int
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self, num_classes: int):
        if self.n_nodes < 1 or self.classes_per_node < 1:
            raise ValueError("n_nodes and classes_per_node must be positive")
        if self.classes_per_node > num_classes:
            raise ValueError(
                f"classes_per_node={self.classes_per_node} exceeds num_classes={num_classes}"
            )
        if self.n_nodes * self.classes_per_node < num_classes:
            raise ValueError("partition cannot cover every class")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


def assign_classes(n_nodes: int, num_classes: int, classes_per_node: int, seed: int):
    """Round-robin assignment over a seeded class shuffle: node i holds
    classes_per_node distinct classes; every class has at least one holder
    when n_nodes * classes_per_node >= num_classes."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_classes)
    out = []
    pos = 0
    for _ in range(n_nodes):
        classes = [int(perm[(pos + j) % num_classes]) for j in range(classes_per_node)]
        pos = (pos + classes_per_node) % num_classes
        out.append(classes)
    return out


def generate_synthetic(
    n_nodes: int,
    num_classes: int,
    dim: int,
    samples_per_node: int,
    heterogeneity: float,
    seed: int,
    classes_per_node: Optional[int] = None,
    class_scale: float = 3.0,
    noise_scale: float = 1.0,
):
    """Gaussian class clusters with node-specific mean shifts.

    Returns (Dataset, assignment) where assignment[i] lists the global sample
    ids held by node i. classes_per_node defaults to all classes (i.i.d.-style
    label coverage); heterogeneity 0 makes every node draw from identical
    class distributions.
    """
    if min(n_nodes, num_classes, dim, samples_per_node) < 1:
        raise ValueError("all counts must be positive")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError("heterogeneity must lie in [0, 1]")
    p = num_classes if classes_per_node is None else classes_per_node
    node_classes = assign_classes(n_nodes, num_classes, p, seed)

    rng = np.random.default_rng((seed, 0xDA7A))
    class_means = rng.normal(0.0, 1.0, size=(num_classes, dim)) * class_scale

    feats, labels, assignment = [], [], []
    next_id = 0
    for i in range(n_nodes):
        offsets = rng.normal(0.0, 1.0, size=(p, dim)) * class_scale * 0.5
        ids = []
        counts = [samples_per_node // p] * p
        for j in range(samples_per_node % p):
            counts[j] += 1
        for (c, cnt, off) in zip(node_classes[i], counts, offsets):
            mean = class_means[c] + heterogeneity * off
            feats.append(mean + rng.normal(0.0, noise_scale, size=(cnt, dim)))
            labels.append(np.full(cnt, c, dtype=np.int64))
            ids.extend(range(next_id, next_id + cnt))
            next_id += cnt
        assignment.append(ids)
    ds = Dataset(np.concatenate(feats), np.concatenate(labels), num_classes)
    return ds, assignment


def _split_train_test(ds, ids, labels, test_fraction, rng):
    # stratified per class so both splits keep every label the node holds
    train_ids, test_ids = [], []
    for c in sorted(set(labels)):
        cls = [sid for sid, lab in zip(ids, labels) if lab == c]
        cls = [cls[k] for k in rng.permutation(len(cls))]
        n_test = max(1, int(round(len(cls) * test_fraction)))
        if n_test >= len(cls):
            raise ValueError(f"class {c} shard too small to split train/test")
        test_ids.extend(cls[:n_test])
        train_ids.extend(cls[n_test:])
    train_ids = sorted(train_ids)
    test_ids = sorted(test_ids)
    mk = lambda sids: Batch(ds.features[sids], ds.labels[sids], np.asarray(sids, dtype=np.int64))
    return mk(train_ids), mk(test_ids)


def make_node_shards(ds: Dataset, assignment, test_fraction: float = 0.2, seed: int = 0):
    """Per-node (train Batch, test Batch) from a node -> sample-id map."""
    rng = np.random.default_rng((seed, 0x5B117))
    shards = []
    for ids in assignment:
        labels = [int(ds.labels[sid]) for sid in ids]
        shards.append(_split_train_test(ds, ids, labels, test_fraction, rng))
    return shards


def partition_by_label(ds: Dataset, spec: PartitionSpec):
    """By-label non-i.i.d. partition: every node receives samples from exactly
    classes_per_node distinct classes, every sample lands on exactly one node,
    and each class's samples split evenly among its holders. Returns a list of
    per-node (train Batch, test Batch)."""
    spec.validate(ds.num_classes)
    node_classes = assign_classes(spec.n_nodes, ds.num_classes, spec.classes_per_node, spec.seed)
    holders = {c: [] for c in range(ds.num_classes)}
    for i, classes in enumerate(node_classes):
        for c in classes:
            holders[c].append(i)

    rng = np.random.default_rng((spec.seed, 0x9A27))
    assignment = [[] for _ in range(spec.n_nodes)]
    for c in range(ds.num_classes):
        ids = np.flatnonzero(ds.labels == c)
        if len(holders[c]) == 0:
            continue
        if len(ids) < len(holders[c]):
            raise ValueError(f"class {c} has fewer samples than holders")
        ids = ids[rng.permutation(len(ids))]
        for node, chunk in zip(holders[c], np.array_split(ids, len(holders[c]))):
            assignment[node].extend(int(s) for s in chunk)

    shard_rng = np.random.default_rng((spec.seed, 0x5B117))
    shards = []
    for i, ids in enumerate(assignment):
        labels = [int(ds.labels[sid]) for sid in ids]
        if len(set(labels)) != spec.classes_per_node:
            raise ValueError(f"node {i} received {len(set(labels))} classes, "
                             f"expected {spec.classes_per_node}")
        shards.append(_split_train_test(ds, ids, labels, spec.test_fraction, shard_rng))
    return shards


def load_csv(path, num_classes: Optional[int] = None) -> Dataset:
    """Load the documented CSV schema: header ``label,f0,...,f{d-1}``, one
    sample per row. num_classes is inferred from the labels when not given."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file") from None
        expected = ["label"] + [f"f{i}" for i in range(len(header) - 1)]
        if header != expected or len(header) < 2:
            raise DataFormatError(f"bad header {header!r}, expected label,f0,...", line=1)
        dim = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise DataFormatError(f"expected {dim + 1} columns, got {len(row)}", line=lineno)
            try:
                lab = int(row[0])
            except ValueError:
                raise DataFormatError(f"non-integer label {row[0]!r}", line=lineno) from None
            if lab < 0:
                raise DataFormatError(f"negative label {lab}", line=lineno)
            try:
                feats.append([float(v) for v in row[1:]])
            except ValueError:
                raise DataFormatError("non-numeric feature value", line=lineno) from None
            labels.append(lab)
    if not feats:
        raise DataFormatError("no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise DataFormatError(
            f"label {int(labels[bad])} >= num_classes {k}", line=bad + 2
        )
    return Dataset(np.asarray(feats), labels, k)


def write_csv(ds: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(ds.features.shape[1])])
        for lab, row in zip(ds.labels, ds.features):
            writer.writerow([int(lab)] + [repr(float(v)) for v in row])
