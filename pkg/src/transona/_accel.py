"""Numba availability and the switch between compiled and pure-numpy kernels.

Set ``TRANSONA_DISABLE_NUMBA=1`` to force the numpy path even when numba is
installed.  Both paths are always importable so they can be compared.
"""
import os

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """No-op stand-in so kernel modules import without numba."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def numba_enabled():
    flag = os.environ.get("TRANSONA_DISABLE_NUMBA", "").strip().lower()
    return HAS_NUMBA and flag not in ("1", "true", "yes", "on")


def thread_cap(default=1):
    """Worker cap from ``TRANSONA_THREADS`` (the CLI's ``--threads`` sets it)."""
    raw = os.environ.get("TRANSONA_THREADS")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)
