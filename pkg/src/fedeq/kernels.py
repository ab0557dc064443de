"""Kernel backend selection.

Prefers the compiled ``fedeq._accel`` extension; falls back to the
pure-numpy kernels when the extension is missing or when the environment
variable ``FEDEQ_PURE_PYTHON`` is set to a non-empty value. Both backends
implement identical contracts, so everything above this module is
backend-agnostic.
"""

import os

from . import _kernels_py

if os.environ.get("FEDEQ_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _accel as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

OK = _kernels_py.OK
NO_CONVERGENCE = _kernels_py.NO_CONVERGENCE
NOT_FINITE = _kernels_py.NOT_FINITE

fp_solve = _impl.fp_solve
adjoint_solve = _impl.adjoint_solve
project_l1 = _impl.project_l1
project_rows = _impl.project_rows


def backend_name() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return _impl.BACKEND
