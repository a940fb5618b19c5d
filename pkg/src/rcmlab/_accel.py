"""Backend selection for the hot loops.

Set ``RCMLAB_BACKEND=numpy`` to force the pure-numpy code paths; the default
is ``numba`` whenever numba imports cleanly.  ``RCMLAB_THREADS`` caps the
numba thread pool.
"""
import os

_requested = os.environ.get("RCMLAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"RCMLAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when the numba backend is active, identity otherwise."""
    if func is None:
        return lambda f: njit(f, **kwargs)
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(**kwargs)(func)
    return func


def set_threads(n=None):
    """Apply a thread cap (argument wins over ``RCMLAB_THREADS``)."""
    if n is None:
        env = os.environ.get("RCMLAB_THREADS")
        n = int(env) if env else None
    if n is None or not HAVE_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


set_threads()
