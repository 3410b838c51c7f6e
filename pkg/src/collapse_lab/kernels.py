"""Backend selection for the hot kernels.

The compiled extension is used when importable; otherwise, or when
``COLLAPSE_LAB_BACKEND=python`` is set, the pure-Python module is used.
"""
import os

from . import _pykernels
from ._pykernels import raise_for_status  # noqa: F401

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Kernel module by name; ``None`` gives the active default."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")


_requested = os.environ.get("COLLAPSE_LAB_BACKEND")
if _requested:
    _active = get_backend(_requested)
else:
    _active = _ckernels if _ckernels is not None else _pykernels

BACKEND = "compiled" if _active is _ckernels and _ckernels is not None else "python"
