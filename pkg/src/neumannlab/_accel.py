"""Backend switch for the hot loops.

Every kernel in :mod:`neumannlab.kernels` exists twice: an ``@njit`` loop
and a vectorised NumPy version. ``NEUMANNLAB_BACKEND=numpy`` (or an
environment without numba) selects the NumPy path; the default is numba.
"""

from __future__ import annotations

import contextlib
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")
_backend = os.environ.get("NEUMANNLAB_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
if _backend not in _VALID:
    raise ValueError(f"NEUMANNLAB_BACKEND must be one of {_VALID}, got {_backend!r}")
if _backend == "numba" and not HAVE_NUMBA:
    _backend = "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True, fastmath=False)(fn)
    return fn
