"""Kernel selection: the compiled extension when importable, else the Python fallback.

Set ``QUEUETOLL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("QUEUETOLL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"
fcfs = _impl.fcfs
lcfs_pr = _impl.lcfs_pr
ps = _impl.ps

KERNELS = {"FCFS": fcfs, "LCFS_PR": lcfs_pr, "PS": ps}
PY_KERNELS = {"FCFS": _kernels_py.fcfs, "LCFS_PR": _kernels_py.lcfs_pr, "PS": _kernels_py.ps}
