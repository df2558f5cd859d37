"""Backend dispatch for the hot numeric kernels.

The environment variable SYNTHBRAIN_BACKEND selects the implementation:

* ``auto``  (default) -- numba if importable, else pure numpy
* ``numba`` -- require the numba kernels (ImportError if unavailable)
* ``numpy`` -- force the pure-numpy fallback

The selection happens on first use and can be overridden programmatically
with :func:`set_backend` (used by the tests and the benchmark).
"""

import os

from . import _numpy

_ACTIVE = None
_NAME = None

_FUNCS = (
    "conv3d_forward",
    "conv3d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "sample_trilinear",
    "sample_nearest",
)


def _load(name):
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name):
    """Force a backend ('numpy' or 'numba'). Returns the previous name."""
    global _ACTIVE, _NAME
    prev = _NAME
    _ACTIVE = _load(name)
    _NAME = name
    return prev


def backend_name():
    _ensure()
    return _NAME


def _ensure():
    global _ACTIVE, _NAME
    if _ACTIVE is not None:
        return
    choice = os.environ.get("SYNTHBRAIN_BACKEND", "auto").lower()
    if choice == "auto":
        try:
            set_backend("numba")
        except ImportError:
            set_backend("numpy")
    else:
        set_backend(choice)


def _dispatch(fname):
    def call(*args):
        _ensure()
        return getattr(_ACTIVE, fname)(*args)
    call.__name__ = fname
    return call


conv3d_forward = _dispatch("conv3d_forward")
conv3d_backward = _dispatch("conv3d_backward")
maxpool2_forward = _dispatch("maxpool2_forward")
maxpool2_backward = _dispatch("maxpool2_backward")
sample_trilinear = _dispatch("sample_trilinear")
sample_nearest = _dispatch("sample_nearest")
