"""Builds the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing compiler or Cython only costs speed, never
functionality.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    # -ffp-contract=off keeps mul+add separately rounded so the compiled
    # kernels agree with the NumPy fallback to the last ulp on forward passes.
    ext_modules = cythonize(
        [
            Extension(
                "volcraft._kernels",
                ["src/volcraft/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
