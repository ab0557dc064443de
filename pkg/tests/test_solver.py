import math

import numpy as np
import pytest

from fedeq.errors import NumericError
from fedeq.projection import ProjectionSettings, project_inf_matrix
from fedeq.solver import (
    DeqParams,
    SolverSettings,
    activation_apply,
    activation_derivative,
    apply_g,
    solve_anderson,
    solve_plain,
)

ACTIVATIONS = ("tanh", "sigmoid", "relu", "softplus")


def random_contraction(rng, d1, d, kappa, activation="tanh"):
    B = project_inf_matrix(rng.normal(size=(d1, d1)), ProjectionSettings(kappa=kappa))
    return DeqParams(B, rng.normal(size=(d1, d)), rng.normal(size=d1), activation)


def test_activation_examples():
    assert np.allclose(activation_apply("tanh", np.zeros(2)), np.zeros(2))
    assert np.allclose(activation_apply("relu", np.array([-1.0, 2.0])), [0.0, 2.0])
    assert np.isclose(activation_apply("softplus", np.array([0.0]))[0], math.log(2.0), atol=1e-15)


def test_activation_derivative_examples():
    assert np.isclose(activation_derivative("sigmoid", np.array([0.0]))[0], 0.25)
    assert np.isclose(activation_derivative("tanh", np.array([0.0]))[0], 1.0)
    assert np.isclose(activation_derivative("softplus", np.array([0.0]))[0], 0.5)
    assert activation_derivative("relu", np.array([0.0]))[0] == 0.0


def test_activation_derivatives_in_unit_interval():
    rng = np.random.default_rng(0)
    u = rng.normal(scale=5.0, size=1000)
    for kind in ACTIVATIONS:
        d = activation_derivative(kind, u)
        assert (d >= 0.0).all() and (d <= 1.0).all()


def test_cone_property():
    rng = np.random.default_rng(3)
    a = rng.normal(scale=10.0, size=1000)
    b = rng.normal(scale=10.0, size=1000)
    for kind in ACTIVATIONS:
        lhs = np.abs(activation_apply(kind, a) - activation_apply(kind, b))
        assert (lhs <= np.abs(a - b) + 1e-15).all()


def test_apply_g_examples():
    rng = np.random.default_rng(7)
    x = rng.normal(size=3)
    p = DeqParams(np.zeros((3, 3)), np.eye(3), np.zeros(3), "tanh")
    assert np.allclose(apply_g(p, rng.normal(size=3), x), np.tanh(x))

    p = DeqParams([[0.5]], [[1.0]], [0.0], "tanh")
    assert apply_g(p, np.array([0.0]), np.array([0.0]))[0] == 0.0
    got = apply_g(p, np.array([1.0]), np.array([0.2]))[0]
    assert np.isclose(got, math.tanh(0.7), atol=1e-14)


def test_solve_plain_already_at_fixed_point():
    rng = np.random.default_rng(11)
    p = random_contraction(rng, 4, 3, 0.8)
    x = rng.normal(size=3)
    s = SolverSettings(method="plain", max_iters=500, tol=1e-10)
    z_star = solve_plain(p, x, settings=s).z_star
    res = solve_plain(p, x, z0=z_star, settings=s)
    assert res.converged and res.iterations <= 1
    assert np.abs(res.z_star - z_star).max() <= s.tol


def test_solve_plain_b_zero_one_iteration():
    rng = np.random.default_rng(12)
    p = DeqParams(np.zeros((4, 4)), rng.normal(size=(4, 3)), rng.normal(size=4), "sigmoid")
    x = rng.normal(size=3)
    res = solve_plain(p, x, settings=SolverSettings(method="plain", tol=1e-12))
    assert res.converged and res.iterations == 1
    assert np.allclose(res.z_star, apply_g(p, np.zeros(4), x))


def test_solve_plain_scalar_closed_form():
    # z = 0.5 z + 0.5 stays in relu's identity region; closed form gives 1.0
    p = DeqParams([[0.5]], [[1.0]], [0.0], "relu")
    res = solve_plain(p, [0.5], settings=SolverSettings(method="plain", tol=1e-10, max_iters=200))
    assert res.converged
    assert abs(res.z_star[0] - 1.0) <= 1e-9


def test_solve_nan_raises():
    p = DeqParams([[2.0]], [[0.0]], [1e308], "relu")
    with pytest.raises(NumericError):
        solve_plain(p, [0.0], settings=SolverSettings(method="plain", max_iters=50, tol=1e-6))


def test_non_convergence_reported():
    p = DeqParams([[0.99]], [[1.0]], [0.0], "relu")
    res = solve_plain(p, [1.0], settings=SolverSettings(method="plain", max_iters=3, tol=1e-12))
    assert not res.converged and res.iterations == 3 and res.residual > 1e-12


def test_anderson_immediate_and_degenerate_window():
    rng = np.random.default_rng(13)
    p = random_contraction(rng, 6, 4, 0.9)
    x = rng.normal(size=4)
    tol = 1e-9
    base = solve_plain(p, x, settings=SolverSettings(method="plain", max_iters=2000, tol=tol))
    res = solve_anderson(p, x, z0=base.z_star, settings=SolverSettings(tol=tol))
    assert res.converged and res.iterations <= 1

    m1 = solve_anderson(p, x, settings=SolverSettings(tol=tol, history_m=1, max_iters=2000))
    assert m1.converged
    assert np.abs(m1.z_star - base.z_star).max() <= 10 * tol


def test_solver_equivalence_random_instances():
    tol = 1e-8
    for seed in range(50):
        rng = np.random.default_rng(seed)
        p = random_contraction(rng, 8, 5, 0.9)
        x = rng.normal(size=5)
        zp = solve_plain(p, x, settings=SolverSettings(method="plain", max_iters=3000, tol=tol))
        za = solve_anderson(p, x, settings=SolverSettings(max_iters=3000, tol=tol))
        assert zp.converged and za.converged
        assert np.abs(zp.z_star - za.z_star).max() <= 10 * tol


def test_anderson_iteration_dominance():
    tol = 1e-8
    plain_iters, aa_iters = [], []
    for seed in range(50):
        rng = np.random.default_rng((seed, 77))
        p = random_contraction(rng, 8, 5, 0.9)
        x = rng.normal(size=5)
        plain_iters.append(
            solve_plain(p, x, settings=SolverSettings(method="plain", max_iters=5000, tol=tol)).iterations
        )
        aa_iters.append(solve_anderson(p, x, settings=SolverSettings(max_iters=5000, tol=tol)).iterations)
    assert np.median(aa_iters) <= np.median(plain_iters)


def test_contraction_invariant():
    rng = np.random.default_rng(21)
    kappa = 0.9
    for _ in range(100):
        p = random_contraction(rng, 6, 4, kappa, activation=ACTIVATIONS[rng.integers(4)])
        x = rng.normal(size=4)
        z1 = rng.normal(size=6)
        z2 = rng.normal(size=6)
        lhs = np.abs(apply_g(p, z1, x) - apply_g(p, z2, x)).max()
        assert lhs <= kappa * np.abs(z1 - z2).max() + 1e-12


def test_fixed_point_certificate():
    # the certificate check is apply_g, independent of the solver internals
    for seed in range(20):
        rng = np.random.default_rng((seed, 5))
        p = random_contraction(rng, 7, 3, 0.95, activation="softplus")
        x = rng.normal(size=3)
        tol = 1e-8
        for solve in (solve_plain, solve_anderson):
            res = solve(p, x, settings=SolverSettings(method="plain" if solve is solve_plain else "anderson",
                                                      max_iters=5000, tol=tol))
            assert res.converged
            assert np.abs(res.z_star - apply_g(p, res.z_star, x)).max() <= tol
