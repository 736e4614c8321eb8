"""Build the optional Cython kernel extension.

The package works without it: ``pssrlab._backend`` falls back to the numpy
kernels when the compiled module is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PSSRLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "pssrlab._ckernels",
                    ["src/pssrlab/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
