import numpy as np
import pytest

from fedeq.data import (
    Dataset,
    PartitionSpec,
    generate_synthetic,
    load_csv,
    make_node_shards,
    partition_by_label,
    write_csv,
)
from fedeq.errors import DataFormatError


def test_synthetic_determinism():
    a, asg_a = generate_synthetic(4, 3, 5, 20, 0.7, seed=9)
    b, asg_b = generate_synthetic(4, 3, 5, 20, 0.7, seed=9)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    assert asg_a == asg_b


def test_synthetic_zero_heterogeneity_shares_class_distributions():
    # with heterogeneity 0 the node offsets vanish, so per-class sample means
    # agree across nodes up to sampling noise
    ds, assignment = generate_synthetic(2, 2, 6, 1000, 0.0, seed=3, noise_scale=1.0)
    means = []
    for ids in assignment:
        ids = np.asarray(ids)
        labs = ds.labels[ids]
        means.append([ds.features[ids[labs == c]].mean(axis=0) for c in range(2)])
    for c in range(2):
        gap = np.abs(means[0][c] - means[1][c]).max()
        assert gap < 0.2  # ~4.5 standard errors at n=500


def test_synthetic_respects_classes_per_node():
    ds, assignment = generate_synthetic(6, 4, 5, 30, 0.5, seed=2, classes_per_node=2)
    for ids in assignment:
        assert len(set(int(ds.labels[i]) for i in ids)) == 2
    # every sample assigned exactly once
    flat = sorted(i for ids in assignment for i in ids)
    assert flat == list(range(len(ds)))


def test_synthetic_linear_separability():
    # centralized multinomial-logistic oracle reaches high accuracy when the
    # class means are far apart relative to the noise
    ds, _ = generate_synthetic(4, 3, 8, 100, 0.2, seed=5, class_scale=3.0)
    X = np.hstack([ds.features, np.ones((len(ds), 1))])
    W = np.zeros((3, X.shape[1]))
    onehot = np.eye(3)[ds.labels]
    for _ in range(300):
        logits = X @ W.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        W -= 0.1 * (p - onehot).T @ X / len(ds)
    acc = (np.argmax(X @ W.T, axis=1) == ds.labels).mean()
    assert acc > 0.9


def test_partition_by_label_cardinality_and_exactness():
    ds, _ = generate_synthetic(1, 10, 4, 3000, 0.0, seed=1)
    spec = PartitionSpec(n_nodes=100, classes_per_node=2, test_fraction=0.2, seed=4)
    shards = partition_by_label(ds, spec)
    assert len(shards) == 100
    seen = []
    for train, test in shards:
        labels = set(int(v) for v in train.labels) | set(int(v) for v in test.labels)
        assert len(labels) == 2
        seen.extend(int(v) for v in train.sample_ids)
        seen.extend(int(v) for v in test.sample_ids)
    assert sorted(seen) == list(range(len(ds)))  # exact partition, no duplicates


def test_partition_full_label_shards():
    ds, _ = generate_synthetic(1, 3, 4, 300, 0.0, seed=1)
    shards = partition_by_label(ds, PartitionSpec(n_nodes=4, classes_per_node=3, seed=0))
    for train, test in shards:
        assert len(set(int(v) for v in train.labels) | set(int(v) for v in test.labels)) == 3


def test_partition_determinism():
    ds, _ = generate_synthetic(1, 4, 4, 400, 0.0, seed=1)
    spec = PartitionSpec(n_nodes=8, classes_per_node=2, seed=12)
    a = partition_by_label(ds, spec)
    b = partition_by_label(ds, spec)
    for (ta, va), (tb, vb) in zip(a, b):
        assert np.array_equal(ta.sample_ids, tb.sample_ids)
        assert np.array_equal(va.sample_ids, vb.sample_ids)


def test_partition_infeasible_spec():
    ds, _ = generate_synthetic(1, 10, 4, 200, 0.0, seed=1)
    with pytest.raises(ValueError):
        partition_by_label(ds, PartitionSpec(n_nodes=3, classes_per_node=2, seed=0))
    with pytest.raises(ValueError):
        partition_by_label(ds, PartitionSpec(n_nodes=4, classes_per_node=11, seed=0))


def test_make_node_shards_split():
    ds, assignment = generate_synthetic(3, 2, 4, 40, 0.4, seed=8)
    shards = make_node_shards(ds, assignment, test_fraction=0.25, seed=8)
    for (train, test), ids in zip(shards, assignment):
        assert len(train) + len(test) == len(ids)
        assert len(test) >= 1 and len(train) >= 1


def test_csv_round_trip(tmp_path):
    ds = Dataset(np.array([[1.5, -2.0], [0.25, 3.0], [0.0, 1.0]]), np.array([0, 2, 1]), 3)
    path = tmp_path / "data.csv"
    write_csv(ds, path)
    back = load_csv(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    assert back.num_classes == 3


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"

    p.write_text("label,f0\n2,0.5\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_csv(p, num_classes=2)

    p.write_text("label,f0\n")
    with pytest.raises(DataFormatError):
        load_csv(p)

    p.write_text("label,f0\n0,abc\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_csv(p)

    p.write_text("label,f0\n0,1.0,9.9\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_csv(p)

    p.write_text("f0,label\n0,1\n")
    with pytest.raises(DataFormatError, match="header"):
        load_csv(p)
