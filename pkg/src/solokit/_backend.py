"""Kernel backend selection.

The compiled extension is preferred when importable; ``SOLOKIT_BACKEND=python``
forces the numpy fallback. ``SOLOKIT_THREADS`` sets the default thread count
for the parallel kernels (the fallback ignores it).
"""

import os

from solokit import _pykernels

try:
    from solokit import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = None
_threads = int(os.environ.get("SOLOKIT_THREADS", "0") or 0)


def available() -> list[str]:
    return sorted(_BACKENDS)


def use(name: str = "auto") -> None:
    """Select the kernel backend: ``auto``, ``compiled`` or ``python``."""
    global _active
    if name == "auto":
        _active = _BACKENDS.get("compiled", _pykernels)
    elif name in _BACKENDS:
        _active = _BACKENDS[name]
    else:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")


def get(name: str):
    if name == "auto":
        return _BACKENDS.get("compiled", _pykernels)
    return _BACKENDS[name]


def kernels():
    return _active


def name() -> str:
    return _active.NAME


def set_threads(n: int) -> None:
    global _threads
    _threads = max(int(n), 0)


def threads(n: int | None = None) -> int:
    return _threads if n is None else n


use(os.environ.get("SOLOKIT_BACKEND", "auto"))
