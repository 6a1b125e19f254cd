"""Hot-kernel backend selection.

The compiled Cython core is preferred when present; otherwise the vectorized
numpy fallback is used.  `MIDSURF_FORCE_NUMPY=1` forces the fallback (useful
for the backend-equivalence tests and the benchmark).  Both backends expose
the same functions and produce the same results.
"""

from __future__ import annotations

import os

from . import numpy_backend

if os.environ.get("MIDSURF_FORCE_NUMPY"):
    _impl = numpy_backend
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = numpy_backend

BACKEND = _impl.NAME

build_grid = _impl.build_grid
grid_query = _impl.grid_query
nearest_neighbors = _impl.nearest_neighbors
trilinear_forward = _impl.trilinear_forward
trilinear_jacobian = _impl.trilinear_jacobian
trilinear_adjoint = _impl.trilinear_adjoint
edt_pass = _impl.edt_pass
set_num_threads = _impl.set_num_threads
