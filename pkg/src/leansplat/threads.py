"""Thread-count control for the numba kernels and BLAS."""

from __future__ import annotations

import os

_limiter = None


def default_threads() -> int:
    env = os.environ.get("LEANSPLAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def set_threads(n: int | None = None) -> int:
    """Use ``n`` numba worker threads (default: LEANSPLAT_THREADS, else core count).

    BLAS stays single-threaded: its blocked reductions may regroup sums when
    the thread count changes, which would break cross-thread-count determinism.
    """
    global _limiter
    import numba
    from threadpoolctl import threadpool_limits

    n = default_threads() if n is None else max(1, int(n))
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    _limiter = threadpool_limits(limits=1)
    return n


def get_threads() -> int:
    import numba

    return numba.get_num_threads()
