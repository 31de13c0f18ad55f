"""Builds the optional compiled probe kernel.

The package works without it: branchland.kernels falls back to the pure
Python implementation when the extension is absent.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "branchland._probe_cy",
                ["src/branchland/_probe_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
