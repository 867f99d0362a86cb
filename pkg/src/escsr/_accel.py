"""Numba dispatch switch.

Hot kernels exist twice: an ``@njit`` version and a pure-numpy version.
The numba path is used when numba imports cleanly and ``ESCSR_DISABLE_NUMBA``
is unset (or "0"). :func:`use_numba` flips it at runtime, mostly for tests
and the benchmark.
"""
import os
from contextlib import contextmanager

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn

    prange = range


def _env_enabled():
    return os.environ.get("ESCSR_DISABLE_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


_state = {"numba": HAVE_NUMBA and _env_enabled()}


def numba_enabled() -> bool:
    return _state["numba"]


def set_numba(enabled: bool) -> None:
    if enabled and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable in this environment")
    _state["numba"] = bool(enabled)


@contextmanager
def use_numba(enabled: bool):
    prev = _state["numba"]
    set_numba(enabled)
    try:
        yield
    finally:
        _state["numba"] = prev
