"""Switch between numba-compiled kernels and the plain numpy/python path.

Set ``QUANTJOINT_DISABLE_JIT=1`` to run every kernel as ordinary Python.
Both paths consume the random generator identically, so a given seed
produces the same draws either way (up to libm rounding differences).
"""

import os

DISABLE_JIT = os.environ.get("QUANTJOINT_DISABLE_JIT", "0").strip().lower() not in ("", "0", "false", "no")

if not DISABLE_JIT:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        DISABLE_JIT = True

USING_NUMBA = not DISABLE_JIT


def jit(fn):
    """Compile ``fn`` in nopython mode unless the JIT is disabled."""
    if DISABLE_JIT:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def python_version_of(fn):
    """Return the uncompiled function behind a kernel."""
    return getattr(fn, "py_func", fn)
