"""Numba switch.

Set ``BTLNER_PURE_NUMPY=1`` to skip numba entirely and run the numpy
implementations of every kernel.
"""

import logging
import os

_TRUTHY = {"1", "true", "yes", "on"}

PURE_NUMPY = os.environ.get("BTLNER_PURE_NUMPY", "").strip().lower() in _TRUTHY

try:
    import numba

    HAVE_NUMBA = True
    logging.getLogger("numba").setLevel(logging.WARNING)
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not PURE_NUMPY


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)
