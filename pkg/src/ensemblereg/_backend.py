"""Select the compiled kernels when available, else the numpy fallback.

Set ``ENSEMBLEREG_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels

kernels = _pykernels
NAME = "python"

if os.environ.get("ENSEMBLEREG_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels
        NAME = "cython"
    except ImportError:
        pass

_num_threads = max(1, int(os.environ.get("ENSEMBLEREG_NUM_THREADS", "1")))


def set_num_threads(n):
    """Threads used for the per-displacement solves (compiled backend only)."""
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads():
    return _num_threads
