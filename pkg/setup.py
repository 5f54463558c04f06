"""Build script for the compiled kernels.

The package works without the extension (a numpy implementation is used
instead), so a failed compile is reported but does not abort the install.
"""
import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("HOTSPOTS_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize

        extra = [] if sys.platform == "win32" else ["-O3", "-ffp-contract=off"]
        ext_modules = cythonize(
            [
                Extension(
                    "hotspots._ckernels",
                    ["src/hotspots/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=extra,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError as exc:  # pragma: no cover
        print(f"warning: Cython unavailable ({exc}); using numpy kernels only")

setup(ext_modules=ext_modules)
