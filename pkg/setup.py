"""Build the optional Cython kernels.

The package works without them: ``auctionbook.kernels`` falls back to the
numpy implementations when the extension is not importable.
"""
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
    import numpy as np
except ImportError:  # pragma: no cover - build without cython
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "auctionbook.kernels._ckernels",
                ["src/auctionbook/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )

setup(ext_modules=ext_modules)
