"""Acceleration switch and deterministic parallel map.

Hot kernels are compiled with numba when it is importable and the
``ROTAFLOW_NO_NUMBA`` environment variable is not set to a truthy value.
Otherwise every batch operation runs on the vectorized numpy engine.
"""
import os
from concurrent.futures import ThreadPoolExecutor

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("ROTAFLOW_NO_NUMBA", "").strip().lower() in _FALSY


try:
    if not _numba_requested():
        raise ImportError("numba disabled by ROTAFLOW_NO_NUMBA")
    import numba

    USE_NUMBA = True
except ImportError:
    numba = None
    USE_NUMBA = False


def jit(func):
    """``numba.njit(cache=True, nogil=True)`` or identity when disabled."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def default_engine():
    return "numba" if USE_NUMBA else "numpy"


def resolve_engine(engine):
    if engine is None or engine == "auto":
        return default_engine()
    if engine not in ("numba", "numpy"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "numba" and not USE_NUMBA:
        raise RuntimeError("numba engine requested but numba is disabled or missing")
    return engine


def thread_count(threads=None):
    """Resolve ``threads``: explicit value, then ROTAFLOW_THREADS, then cores."""
    if threads is None:
        env = os.environ.get("ROTAFLOW_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def ordered_map(func, items, threads=None):
    """Map ``func`` over ``items`` keeping input order.

    The numba kernels release the GIL, so threads give real parallelism.
    Results never depend on the thread count.
    """
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))
