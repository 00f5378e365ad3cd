"""Kernel backend selection.

Hot numeric loops (data-matrix assembly, sparse Cholesky, triangular
substitution) exist twice: a numba-jitted version and a pure numpy/scipy
fallback. The active backend is chosen once at import time from the
``SLAMCERT_BACKEND`` environment variable:

    SLAMCERT_BACKEND=numba   force the jitted kernels (error if numba missing)
    SLAMCERT_BACKEND=numpy   force the fallback kernels
    (unset)                  numba when importable, numpy otherwise

``benchmarks/backend_bench.py`` times the two paths against each other.
"""

import os

try:
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap

    def prange(*args):
        return range(*args)


_requested = os.environ.get("SLAMCERT_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"SLAMCERT_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )
if _requested == "numba" and not NUMBA_AVAILABLE:
    raise ImportError("SLAMCERT_BACKEND=numba but numba is not importable")

USE_NUMBA = NUMBA_AVAILABLE if _requested == "" else _requested == "numba"


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def limit_blas_threads(n=1):
    """Pin BLAS thread pools.

    The workload is dominated by many small dense factorizations, where
    multi-threaded BLAS spin-waits cost far more than they save. Called
    by the CLI, the test suite, and pool workers; library users can opt
    out by simply not calling it.
    """
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n, user_api="blas")
    except ImportError:  # pragma: no cover
        pass
