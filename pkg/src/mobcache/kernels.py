"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``MOBCACHE_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import importlib
import os

__all__ = ["BACKEND", "backend", "kmeans_assign", "greedy_fill", "exhaustive_search"]


def backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("mobcache._ckernels")
    if name == "python":
        return importlib.import_module("mobcache._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("MOBCACHE_PURE_PYTHON", "") not in ("", "0"):
        return "python", backend("python")
    try:
        return "cython", backend("cython")
    except ImportError:
        return "python", backend("python")


BACKEND, _impl = _select()
kmeans_assign = _impl.kmeans_assign
greedy_fill = _impl.greedy_fill
exhaustive_search = _impl.exhaustive_search
