"""Build script for the optional compiled bit kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed build only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "bitgen.bitops._kernels",
                ["src/bitgen/bitops/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    print("cython/numpy not available, building without compiled bit kernels")

setup(ext_modules=ext_modules)
