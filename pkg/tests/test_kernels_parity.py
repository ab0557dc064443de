"""Compiled extension vs. pure-numpy kernels: identical contracts.

Skipped when the extension is not built; the rest of the suite runs against
whichever backend the dispatcher selected.
"""

import numpy as np
import pytest

from fedeq import _kernels_py
from fedeq import kernels
from fedeq.projection import ProjectionSettings, project_inf_matrix

_accel = pytest.importorskip("fedeq._accel")


def contraction_case(seed, d1=8, d=5, kappa=0.9):
    rng = np.random.default_rng(seed)
    B = project_inf_matrix(rng.normal(size=(d1, d1)), ProjectionSettings(kappa=kappa))
    cxb = np.ascontiguousarray(rng.normal(size=d1))
    z0 = rng.normal(size=d1)
    return B, cxb, z0


@pytest.mark.parametrize("method", [0, 1])
@pytest.mark.parametrize("act", [0, 1, 2, 3])
def test_fp_solve_parity(method, act):
    for seed in range(10):
        B, cxb, z0 = contraction_case((seed, act, method))
        args = (act, method, 2000, 1e-10, 5, 1.0, 1e-10)
        zc, ic, rc, sc = _accel.fp_solve(B, cxb, z0, *args)
        zp, ip, rp, sp = _kernels_py.fp_solve(B, cxb, z0, *args)
        assert sc == sp == kernels.OK
        assert np.abs(np.asarray(zc) - zp).max() <= 1e-9
        assert abs(ic - ip) <= 2  # tiny arithmetic differences may shift a step


def test_fp_solve_damping_and_small_window():
    B, cxb, z0 = contraction_case(3)
    for m, damping in ((1, 0.7), (2, 0.5), (3, 1.0)):
        zc, _, _, sc = _accel.fp_solve(B, cxb, z0, 0, 1, 3000, 1e-10, m, damping, 1e-10)
        zp, _, _, sp = _kernels_py.fp_solve(B, cxb, z0, 0, 1, 3000, 1e-10, m, damping, 1e-10)
        assert sc == sp == kernels.OK
        assert np.abs(np.asarray(zc) - zp).max() <= 1e-9


def test_adjoint_parity():
    rng = np.random.default_rng(0)
    for seed in range(10):
        B, _, _ = contraction_case(seed)
        dphi = np.ascontiguousarray(rng.uniform(0.0, 1.0, size=8))
        y = rng.normal(size=8)
        uc, _, rc, sc = _accel.adjoint_solve(B, dphi, y, 5000, 1e-12)
        up, _, rp, sp = _kernels_py.adjoint_solve(B, dphi, y, 5000, 1e-12)
        assert sc == sp == kernels.OK
        assert np.abs(np.asarray(uc) - up).max() <= 1e-10


def test_projection_parity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        M = np.ascontiguousarray(rng.normal(scale=rng.uniform(0.2, 4.0), size=(6, 6)))
        pc, sc = _accel.project_rows(M, 0.95, 1e-12, 200)
        pp, sp = _kernels_py.project_rows(M, 0.95, 1e-12, 200)
        assert sc == sp == kernels.OK
        assert np.abs(np.asarray(pc) - pp).max() <= 1e-12


def test_nan_status_parity():
    B = np.ascontiguousarray([[2.0]])
    cxb = np.ascontiguousarray([1e308])
    z0 = np.zeros(1)
    _, _, _, sc = _accel.fp_solve(B, cxb, z0, 2, 0, 50, 1e-6, 1, 1.0, 1e-10)
    _, _, _, sp = _kernels_py.fp_solve(B, cxb, z0, 2, 0, 50, 1e-6, 1, 1.0, 1e-10)
    assert sc == sp == kernels.NOT_FINITE
