"""Backend selection for the hot kernels.

The compiled ``_ckernels`` module is used when it imports; otherwise (or when
the environment variable ``HOTSPOTS_PURE_PYTHON=1`` is set) the numpy
implementations in ``_pykernels`` are used.  ``BACKEND`` names the active
one.  Both modules expose the same functions.
"""
import os

from . import _pykernels

_NAMES = (
    "uniforms4",
    "normals4",
    "project",
    "ray_first_hit",
    "locate",
    "interpolate",
    "gamma_hit",
    "mirror_step",
    "mirror_advance",
)


def _load_compiled():
    if os.environ.get("HOTSPOTS_PURE_PYTHON", "") == "1":
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_active = _compiled if _compiled is not None else _pykernels
BACKEND = _active.BACKEND
HAVE_COMPILED = _compiled is not None

uniforms4 = _active.uniforms4
normals4 = _active.normals4
project = _active.project
ray_first_hit = _active.ray_first_hit
locate = _active.locate
interpolate = _active.interpolate
gamma_hit = _active.gamma_hit
mirror_step = _active.mirror_step
mirror_advance = _active.mirror_advance
nearest = _active.nearest_boundary
numpy_nearest = _pykernels.nearest_boundary


def backend_module(name):
    """Return the kernel module for ``name`` ('numpy' or 'cython')."""
    if name == "numpy":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            from . import _ckernels  # raises ImportError with the real reason

            return _ckernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
