"""Build script: compiles the optional fast-kernel extension.

The package works without the extension (a pure-numpy twin of the kernels
is selected at import time), so the extension is marked optional and any
build failure degrades to the pure path instead of breaking the install.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "brokenorbits._kernels_cy",
                ["src/brokenorbits/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
    for ext in extensions:
        ext.optional = True
except ImportError:
    extensions = []

setup(ext_modules=extensions)
