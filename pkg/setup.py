from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: if Cython or a C compiler is missing the
# package installs anyway and ebmcompose.kernels falls back to the pure-Python
# implementations.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ebmcompose._kernels",
                ["src/ebmcompose/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
