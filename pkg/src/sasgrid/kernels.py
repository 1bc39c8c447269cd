"""Kernel selection.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementation in ``_fallback`` takes over.  Setting
``SASGRID_PURE_PYTHON=1`` forces the fallback.  Systems with more than
``DENSE_MAX_NODES`` nodes always go through the sparse solver.
"""

import os

from . import _fallback

DENSE_MAX_NODES = 64

SETTLED = _fallback.SETTLED
ISLANDING = _fallback.ISLANDING
UNSERVED = _fallback.UNSERVED
SINGULAR = _fallback.SINGULAR

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("SASGRID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = compiled
    BACKEND = "cython"
else:
    _impl = _fallback
    BACKEND = "python"

# both implementations, for benchmarks and cross-checks
fallback = _fallback

label_nodes = _impl.label_nodes
_dense = _impl.dc_solve
_settle = _impl.settle


class KernelSingular(Exception):
    """Singular susceptance matrix, whichever backend raised it."""


_SINGULAR_TYPES = tuple({_fallback.KernelSingular, getattr(compiled, "KernelSingular", _fallback.KernelSingular)})


def dc_solve(n_nodes, frm, to, inv_x, inj, gen_node):
    """``(theta, flow, balanced_injection, node_label)``; see ``_kernels.dc_solve``."""
    try:
        if n_nodes > DENSE_MAX_NODES:
            return _fallback.sparse_dc_solve(n_nodes, frm, to, inv_x, inj, gen_node)
        return _dense(n_nodes, frm, to, inv_x, inj, gen_node)
    except _SINGULAR_TYPES as exc:
        raise KernelSingular(str(exc)) from exc


def settle(*args, allow_islands=False):
    """Dispatch, flow and overload cascade in one call; returns a status code."""
    n_nodes = args[1]
    if n_nodes > DENSE_MAX_NODES:
        return _fallback.settle(*args, allow_islands=allow_islands, sparse=True)
    return _settle(*args, allow_islands=allow_islands)
