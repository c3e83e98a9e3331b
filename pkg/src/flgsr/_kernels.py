"""Selects the group-sweep backend at import time.

The compiled extension is used when it imports cleanly; ``FLGSR_KERNEL=python``
forces the pure-numpy path.
"""

import os

try:
    from ._sweep import sweep_groups as compiled_sweep
except ImportError:  # extension not built
    compiled_sweep = None

_forced = os.environ.get("FLGSR_KERNEL", "").strip().lower()
_backend = "python" if (compiled_sweep is None or _forced == "python") else "compiled"


def backend() -> str:
    """Name of the backend in use: ``"compiled"`` or ``"python"``."""
    return _backend


def available() -> list[str]:
    return ["python"] if compiled_sweep is None else ["compiled", "python"]


def set_backend(name: str):
    """Switch backend for the rest of the process (benchmarks, tests)."""
    global _backend
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and compiled_sweep is None:
        raise ImportError("compiled sweep extension is not available")
    _backend = name
