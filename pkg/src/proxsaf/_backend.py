"""Select the adaptation-loop backend at import time.

The compiled extension is preferred; the pure-Python driver is the
fallback.  Set ``PROXSAF_BACKEND=python`` (or ``compiled``) to force a
choice; forcing ``compiled`` raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import _core_py

_forced = os.environ.get("PROXSAF_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _core_py
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "PROXSAF_BACKEND=compiled but the proxsaf._core extension is not built"
            )
        _impl = _core_py

run_adaptation = _impl.run_adaptation
BACKEND_NAME: str = _impl.BACKEND_NAME
DIVERGENCE_LIMIT: float = _impl.DIVERGENCE_LIMIT


def backend_name() -> str:
    """Name of the active adaptation backend ("compiled" or "python")."""
    return BACKEND_NAME


def get_backend(name: str | None = None):
    """Return a backend module by name (None for the active one)."""
    if name in (None, BACKEND_NAME):
        return _impl
    if name == "python":
        return _core_py
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
