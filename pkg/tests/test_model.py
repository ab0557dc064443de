import math

import numpy as np
import pytest

from fedeq.errors import DimensionError
from fedeq.model import (
    Batch,
    HeadLayer,
    HeadParams,
    full_gradient,
    head_backward,
    head_forward,
    init_head,
    loss_and_grad,
    predict,
)
from fedeq.projection import ProjectionSettings, project_inf_matrix
from fedeq.solver import DeqParams, SolverSettings, apply_g, solve_plain


def random_instance(seed, d=3, d1=4, classes=3, kappa=0.85, activation="tanh"):
    rng = np.random.default_rng(seed)
    B = project_inf_matrix(rng.normal(size=(d1, d1)), ProjectionSettings(kappa=kappa))
    theta = DeqParams(B, rng.normal(size=(d1, d)) * 0.5, rng.normal(size=d1) * 0.5, activation)
    head = init_head([d1, 5, classes], "tanh", rng)
    return theta, head, rng


def test_head_forward_examples():
    z = np.array([1.5, -2.0])
    identity = HeadParams([HeadLayer(np.eye(2), np.zeros(2))])
    out, _ = head_forward(identity, z)
    assert np.array_equal(out, z)

    const = HeadParams([HeadLayer(np.zeros((2, 2)), np.array([3.0, -1.0]))])
    out, _ = head_forward(const, z)
    assert np.array_equal(out, [3.0, -1.0])

    two = HeadParams([HeadLayer([[2.0]], [0.0], "relu"), HeadLayer([[3.0]], [0.0])])
    out, _ = head_forward(two, np.array([1.0]))
    assert out[0] == 6.0

    with pytest.raises(DimensionError):
        head_forward(identity, np.zeros(3))


def test_head_backward_identity_and_zero():
    z = np.array([2.0, -1.0])
    identity = HeadParams([HeadLayer(np.eye(2), np.zeros(2))])
    _, tape = head_forward(identity, z)
    dl = np.array([0.3, -0.7])
    grads, dz = head_backward(identity, tape, dl)
    assert np.allclose(dz, dl)
    assert np.allclose(grads.layers[0][0], np.outer(dl, z))
    assert np.allclose(grads.layers[0][1], dl)

    grads0, dz0 = head_backward(identity, tape, np.zeros(2))
    assert np.allclose(dz0, 0) and np.allclose(grads0.layers[0][0], 0)


def test_head_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    head = init_head([3, 4, 2], "tanh", rng)
    z = rng.normal(size=3)
    label = 1

    def loss_of(h):
        out, _ = head_forward(h, z)
        return loss_and_grad("softmax_cross_entropy", out, label)[0]

    out, tape = head_forward(head, z)
    _, dl_dout = loss_and_grad("softmax_cross_entropy", out, label)
    grads, _ = head_backward(head, tape, dl_dout)

    eps = 1e-6
    for li, layer in enumerate(head.layers):
        for arr, g in ((layer.weight, grads.layers[li][0]), (layer.bias, grads.layers[li][1])):
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + eps
                up = loss_of(head)
                arr[idx] = keep - eps
                dn = loss_of(head)
                arr[idx] = keep
                fd = (up - dn) / (2 * eps)
                assert abs(fd - g[idx]) <= 1e-6 * max(1.0, abs(fd))


def test_loss_examples():
    loss, grad = loss_and_grad("softmax_cross_entropy", np.array([0.0, 0.0]), 0)
    assert np.isclose(loss, math.log(2.0), atol=1e-15)
    assert np.allclose(grad, [-0.5, 0.5])

    loss, _ = loss_and_grad("softmax_cross_entropy", np.array([50.0, 0.0]), 0)
    assert loss <= 1e-20

    loss, _ = loss_and_grad("softmax_cross_entropy", np.array([1.0, 0.0]), 1)
    assert np.isclose(loss, 1.3132616875182228, atol=1e-12)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    for kind in ("softmax_cross_entropy", "mean_squared_error"):
        out = rng.normal(size=5)
        label = 3
        _, grad = loss_and_grad(kind, out, label)
        eps = 1e-6
        for i in range(5):
            up = out.copy(); up[i] += eps
            dn = out.copy(); dn[i] -= eps
            fd = (loss_and_grad(kind, up, label)[0] - loss_and_grad(kind, dn, label)[0]) / (2 * eps)
            assert abs(fd - grad[i]) <= 1e-7 * max(1.0, abs(fd))


def test_predict_identity_head_and_collapse():
    theta, _, rng = random_instance(3)
    identity = HeadParams([HeadLayer(np.eye(4), np.zeros(4))])
    x = rng.normal(size=3)
    s = SolverSettings(max_iters=2000, tol=1e-10)
    cls, z_star = predict(theta, identity, x, s)
    assert cls == int(np.argmax(z_star))

    # B = 0 collapses to a single explicit layer
    theta0 = DeqParams(np.zeros((4, 4)), theta.C, theta.b, theta.activation)
    cls0, z0 = predict(theta0, identity, x, s)
    direct = apply_g(theta0, np.zeros(4), x)
    assert np.abs(z0 - direct).max() <= 1e-10
    assert cls0 == int(np.argmax(direct))


def test_predict_matches_independent_recomputation_and_ties():
    theta, head, rng = random_instance(4)
    x = rng.normal(size=3)
    s = SolverSettings(max_iters=5000, tol=1e-11)
    cls, z_star = predict(theta, head, x, s)
    out, _ = head_forward(head, solve_plain(theta, x, settings=SolverSettings(
        method="plain", max_iters=20000, tol=1e-11)).z_star)
    assert cls == int(np.argmax(out))

    tie_head = HeadParams([HeadLayer(np.vstack([np.ones(4), np.ones(4)]), np.zeros(2))])
    cls_tie, _ = predict(theta, tie_head, x, s)
    assert cls_tie == 0


def make_batch(rng, n, d, classes):
    return Batch(rng.normal(size=(n, d)), rng.integers(0, classes, n), np.arange(n))


def test_full_gradient_duplicate_sample_mean():
    theta, head, rng = random_instance(11)
    x = rng.normal(size=3)
    s = SolverSettings(max_iters=2000, tol=1e-10)
    single = Batch(np.array([x]), np.array([1]), np.array([0]))
    double = Batch(np.array([x, x]), np.array([1, 1]), np.array([0, 0]))
    g1 = full_gradient(theta, head, single, settings=s)
    g2 = full_gradient(theta, head, double, settings=s)
    assert np.abs(g1.gtheta.dB - g2.gtheta.dB).max() <= 1e-12
    assert abs(g1.mean_loss - g2.mean_loss) <= 1e-12


def test_full_gradient_zero_head_gives_zero_theta_grad():
    theta, head, rng = random_instance(12)
    for layer in head.layers:
        layer.weight[:] = 0.0
        layer.bias[:] = 0.0
    batch = make_batch(rng, 3, 3, 3)
    g = full_gradient(theta, head, batch, settings=SolverSettings(max_iters=2000, tol=1e-9))
    assert np.allclose(g.gtheta.dB, 0) and np.allclose(g.gtheta.dC, 0) and np.allclose(g.gtheta.db, 0)


def test_full_gradient_matches_finite_differences():
    theta, head, rng = random_instance(13, activation="softplus")
    batch = make_batch(rng, 2, 3, 3)
    s = SolverSettings(max_iters=5000, tol=1e-11)
    tight = SolverSettings(method="plain", max_iters=50000, tol=1e-13)
    fg = full_gradient(theta, head, batch, settings=s)

    def composite_loss():
        total = 0.0
        for x, label in zip(batch.features, batch.labels):
            z = solve_plain(theta, x, settings=tight).z_star
            out, _ = head_forward(head, z)
            total += loss_and_grad("softmax_cross_entropy", out, int(label))[0]
        return total / len(batch)

    eps = 1e-5

    def fd_of(arr, idx):
        keep = arr[idx]
        arr[idx] = keep + eps
        up = composite_loss()
        arr[idx] = keep - eps
        dn = composite_loss()
        arr[idx] = keep
        return (up - dn) / (2 * eps)

    for arr, g in ((theta.B, fg.gtheta.dB), (theta.C, fg.gtheta.dC), (theta.b, fg.gtheta.db)):
        for idx in np.ndindex(arr.shape):
            fd = fd_of(arr, idx)
            assert abs(fd - g[idx]) <= max(1e-5 * abs(fd), 1e-8)
    for li, layer in enumerate(head.layers):
        for arr, g in ((layer.weight, fg.gw.layers[li][0]), (layer.bias, fg.gw.layers[li][1])):
            for idx in np.ndindex(arr.shape):
                fd = fd_of(arr, idx)
                assert abs(fd - g[idx]) <= max(1e-5 * abs(fd), 1e-8)


def test_warm_start_correctness_and_efficiency():
    theta, head, rng = random_instance(14)
    batch = make_batch(rng, 6, 3, 3)
    s = SolverSettings(max_iters=5000, tol=1e-9)

    cold = full_gradient(theta, head, batch, settings=s, warm_cache=None)
    cache = {}
    first = full_gradient(theta, head, batch, settings=s, warm_cache=cache)
    second = full_gradient(theta, head, batch, settings=s, warm_cache=cache)

    assert np.abs(cold.gtheta.dB - first.gtheta.dB).max() <= 1e-6
    assert abs(cold.mean_loss - first.mean_loss) <= 1e-9
    assert second.fp_iterations < first.fp_iterations
    assert np.abs(second.gtheta.dB - first.gtheta.dB).max() <= 1e-6


def test_full_gradient_empty_batch_rejected():
    theta, head, _ = random_instance(15)
    with pytest.raises(ValueError):
        full_gradient(theta, head, Batch(np.zeros((0, 3)), np.zeros(0), np.zeros(0)))
