"""Build script for the optional compiled conv3d kernels.

The package is fully functional without the extension: ``stclr.kernels``
falls back to the NumPy implementation when ``stclr.kernels._conv_cy`` is
not importable. Building requires Cython and the NumPy headers; install
with ``pip install -e . --no-build-isolation``.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "stclr.kernels._conv_cy",
                ["src/stclr/kernels/_conv_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
