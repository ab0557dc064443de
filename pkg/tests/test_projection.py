import numpy as np
import pytest

from fedeq.errors import NumericError
from fedeq.projection import ProjectionSettings, project_inf_matrix, project_l1_row
from fedeq.tensor import inf_norm


def sort_based_l1_projection(v, radius):
    """Independent oracle: sort-and-threshold Euclidean projection onto the
    l1 ball (no bisection involved)."""
    a = np.abs(v)
    if a.sum() <= radius:
        return np.asarray(v, dtype=float).copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(u) + 1)
    valid = u - (css - radius) / k > 0
    rho = np.max(np.flatnonzero(valid))
    theta = (css[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def test_row_examples():
    assert np.allclose(project_l1_row([1.0, 0.5], 2.0), [1.0, 0.5])
    assert np.allclose(project_l1_row([3.0, 1.0], 2.0), [2.0, 0.0], atol=1e-9)
    assert np.allclose(project_l1_row([2.0, 2.0], 2.0), [1.0, 1.0], atol=1e-9)


def test_matrix_examples():
    # row-wise semantics: matches the per-row projection at the same radius
    B = np.array([[3.0, 1.0], [0.1, 0.2]])
    for kappa in (0.5, 0.9):
        got = project_inf_matrix(B, ProjectionSettings(kappa=kappa))
        for i in range(2):
            assert np.allclose(got[i], project_l1_row(B[i], kappa), atol=1e-12)
    # feasible input and zero input pass through unchanged
    feasible = np.array([[0.3, 0.1], [0.05, 0.2]])
    assert np.array_equal(project_inf_matrix(feasible, ProjectionSettings(kappa=0.9)), feasible)
    assert np.array_equal(project_inf_matrix(np.zeros((3, 3))), np.zeros((3, 3)))


def test_row_example_at_large_radius():
    # the first row of [[3,1],[0.1,0.2]] at radius 2, solved row-wise
    got = np.vstack([project_l1_row([3.0, 1.0], 2.0), project_l1_row([0.1, 0.2], 2.0)])
    assert np.allclose(got, [[2.0, 0.0], [0.1, 0.2]], atol=1e-9)


def test_feasibility_and_idempotence():
    rng = np.random.default_rng(0)
    settings = ProjectionSettings(kappa=0.95)
    for _ in range(100):
        B = rng.normal(scale=rng.uniform(0.1, 5.0), size=(6, 6))
        P = project_inf_matrix(B, settings)
        assert inf_norm(P) <= settings.kappa + 1e-9
        PP = project_inf_matrix(P, settings)
        assert np.abs(PP - P).max() <= 1e-9


def test_optimality_against_sort_oracle():
    rng = np.random.default_rng(1)
    for trial in range(200):
        n = rng.integers(1, 7)
        v = rng.normal(scale=rng.uniform(0.2, 4.0), size=n)
        radius = rng.uniform(0.2, 2.0)
        ours = project_l1_row(v, radius)
        oracle = sort_based_l1_projection(v, radius)
        assert np.abs(ours - oracle).max() <= 1e-8
        # never farther from v than the oracle's feasible point
        assert np.linalg.norm(ours - v) <= np.linalg.norm(oracle - v) + 1e-8
        assert np.abs(ours).sum() <= radius + 1e-9


def test_non_expansiveness():
    rng = np.random.default_rng(2)
    for _ in range(200):
        u = rng.normal(size=5) * 2
        v = rng.normal(size=5) * 2
        pu = project_l1_row(u, 1.0)
        pv = project_l1_row(v, 1.0)
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


def test_bisection_budget_error():
    with pytest.raises(NumericError):
        project_l1_row([5.0, -3.0, 2.0], 1.0, ProjectionSettings(kappa=0.5, max_bisect_iters=2))


def test_settings_validation():
    with pytest.raises(ValueError):
        ProjectionSettings(kappa=1.5)
    with pytest.raises(ValueError):
        project_l1_row([1.0], -1.0)
