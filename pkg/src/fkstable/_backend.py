"""Backend selection: numba-compiled kernels or the vectorized numpy fallback.

Set ``FKSTABLE_NO_NUMBA=1`` to force the numpy path at import time, or use
:func:`use_backend` to switch temporarily.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("FKSTABLE_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

JIT_OPTIONS = {"nogil": True, "cache": True, "fastmath": False, "error_model": "numpy"}

_state = {"name": "numpy" if (_DISABLED or numba is None) else "numba"}


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(**JIT_OPTIONS)(fn)


def numba_available() -> bool:
    return numba is not None


def active_backend() -> str:
    return _state["name"]


def set_backend(name: str) -> None:
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not importable")
    _state["name"] = name


@contextmanager
def use_backend(name: str):
    previous = _state["name"]
    set_backend(name)
    try:
        yield
    finally:
        _state["name"] = previous
