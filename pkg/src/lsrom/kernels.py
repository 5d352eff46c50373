"""Backend selection for the hot kernels.

The compiled extension is used when importable; ``LSROM_PURE=1`` forces the
pure-Python fallback. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("LSROM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def backend_module(name: str | None = None):
    """Return the kernel module for ``name`` ("compiled"/"python"), or the active one."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def som_train(data, weights, grid_d2, order, t0, total_steps,
              eps0, eps_end, sigma0, sigma_end, backend=None):
    if not (weights.flags.c_contiguous and weights.dtype == np.float64):
        raise ValueError("weights must be a C-contiguous float64 array (updated in place)")
    backend_module(backend).som_train(
        _f64(data), weights, _f64(grid_d2), np.ascontiguousarray(order, dtype=np.int64),
        int(t0), int(total_steps), float(eps0), float(eps_end), float(sigma0), float(sigma_end))


def assign_nearest(points, centers, backend=None):
    return backend_module(backend).assign_nearest(_f64(points), _f64(centers))


def count_foreign(nbr_group, in_scope, in_target, kappa, backend=None):
    nbr_group = np.ascontiguousarray(nbr_group, dtype=np.int64)
    mod = backend_module(backend)
    if mod is _pykernels:
        return mod.count_foreign(nbr_group, np.asarray(in_scope, bool),
                                 np.asarray(in_target, bool), int(kappa))
    return mod.count_foreign(nbr_group, np.ascontiguousarray(in_scope, dtype=np.uint8),
                             np.ascontiguousarray(in_target, dtype=np.uint8), int(kappa))


def hnsw_graph(data, levels, max_degree, ef_construction, backend=None):
    return backend_module(backend).HnswGraph(_f64(data), np.asarray(levels, dtype=np.int64),
                                             int(max_degree), int(ef_construction))
