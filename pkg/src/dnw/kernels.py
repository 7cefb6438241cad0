"""Backend selection for the propagation kernels.

The compiled extension is used when importable; set ``DNW_PURE_PYTHON=1`` to
force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DNW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

forward_nodes = _impl.forward_nodes
backward_nodes = _impl.backward_nodes
edge_grad = _impl.edge_grad


def backend_module(name):
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
