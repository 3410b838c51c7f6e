"""Build the optional compiled kernels.

The package imports and runs without the extension; ``collapse_lab.kernels``
falls back to the pure-Python implementation when the build is skipped.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("COLLAPSE_LAB_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "collapse_lab._ckernels",
                    ["src/collapse_lab/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
