"""Build script for the optional compiled kernels.

The package works without the extension: tbnn._kernels falls back to a
pure-numpy implementation when the compiled module is absent.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "tbnn._kernels.cython_impl",
            ["src/tbnn/_kernels/cython_impl.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except ImportError:
    # Cython or numpy missing at build time: ship pure-Python only.
    ext_modules = []

setup(ext_modules=ext_modules)
