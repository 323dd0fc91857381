"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension; tvq.kernels falls
back to the vectorized NumPy implementation when `tvq._kernels` is absent.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [Extension("tvq._kernels", ["src/tvq/_kernels.pyx"])],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    extensions = []
    include_dirs = []

setup(ext_modules=extensions, include_dirs=include_dirs)
