"""Build script: compiles the optional fast-kernel extension.

The package is fully functional without the extension (a vectorized numpy
backend is selected at import time); the extension accelerates the hot
kernels (nearest-neighbor queries, trilinear sampling, distance-transform
scanlines) by roughly an order of magnitude.  Set MIDSURF_NO_EXT=1 to skip
compilation entirely.
"""

import os
import sys

from setuptools import setup


def _extensions():
    if os.environ.get("MIDSURF_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError:
        print("midsurf: cython/numpy unavailable at build time, "
              "installing without the compiled core", file=sys.stderr)
        return []

    extra_compile = ["-O3"]
    extra_link = []
    if sys.platform.startswith("linux"):
        extra_compile.append("-fopenmp")
        extra_link.append("-fopenmp")
    ext = Extension(
        "midsurf._kernels._core",
        ["src/midsurf/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=extra_compile,
        extra_link_args=extra_link,
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions())
