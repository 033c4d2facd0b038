"""Kernel backend selection.

The compiled extension is preferred.  Set ``PENALTYOPT_BACKEND=python`` to
force the pure-Python kernels (useful for debugging and for the benchmark).
"""
import os
import warnings

from . import _core_py

_requested = os.environ.get("PENALTYOPT_BACKEND", "auto").lower()

core = _core_py
name = "python"

if _requested != "python":
    try:
        from . import _core as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        if _requested == "compiled":
            raise
        warnings.warn(
            "penaltyopt compiled core unavailable; using pure-Python kernels",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        core = _compiled
        name = "compiled"


def use(backend: str) -> None:
    """Switch the active backend at runtime (``"python"`` or ``"compiled"``)."""
    global core, name
    if backend == "python":
        core, name = _core_py, "python"
    elif backend == "compiled":
        from . import _core as _compiled

        core, name = _compiled, "compiled"
    else:
        raise ValueError(f"unknown backend {backend!r}")
