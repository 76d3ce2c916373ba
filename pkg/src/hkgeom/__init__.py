"""Numerical models of collapsing hyperkähler 4-manifolds and their ends.

Set ``HKGEOM_THREADS`` before the first import to cap BLAS/OpenMP threads;
it has no effect once numpy is already loaded.
"""
import os as _os

_threads = _os.environ.get("HKGEOM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

__version__ = "0.1.0"
