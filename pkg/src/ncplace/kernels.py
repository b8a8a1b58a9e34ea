"""Backend selection for the hot kernels.

The compiled ``_core`` extension is used when it imports; otherwise the
pure-Python ``_pycore`` fallback is used.  Set ``NCPLACE_PURE=1`` to force the
fallback.
"""
from __future__ import annotations

import os

from . import _pycore
from .gf256 import INV, MUL

_impl = _pycore
BACKEND = "python"

if os.environ.get("NCPLACE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None
    if _core is not None:
        _core.set_tables(MUL, INV)
        _impl = _core
        BACKEND = "cython"

in_span = _impl.in_span
insert_row = _impl.insert_row
combine = _impl.combine
expected_useful = _impl.expected_useful
arrival_pmf = _pycore.arrival_pmf
sim_run = _impl.sim_run


def backend(name: str):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _pycore
    from . import _core

    _core.set_tables(MUL, INV)
    return _core
