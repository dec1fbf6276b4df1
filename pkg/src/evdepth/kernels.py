"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy fallback
is used. Set ``EVDEPTH_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

from . import _pykernels

_NAMES = ("voxel_accumulate", "cstr_accumulate", "tore_ages", "threshold_events")


def load_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``.

    Raises ImportError when the compiled extension is unavailable.
    """
    if name == "python":
        return _pykernels
    if name == "compiled":
        return importlib.import_module("evdepth._ckernels")
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


def _select():
    if os.environ.get("EVDEPTH_PURE_PYTHON", "") not in ("", "0"):
        return "python", _pykernels
    try:
        return "compiled", load_backend("compiled")
    except ImportError:
        return "python", _pykernels


BACKEND, _impl = _select()

voxel_accumulate = _impl.voxel_accumulate
cstr_accumulate = _impl.cstr_accumulate
tore_ages = _impl.tore_ages
threshold_events = _impl.threshold_events

__all__ = ["BACKEND", "load_backend", "available_backends", *_NAMES]
