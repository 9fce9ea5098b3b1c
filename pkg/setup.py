import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; subgeo falls back to numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SUBGEO_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "subgeo._kernels",
                ["src/subgeo/_kernels.pyx"],
                include_dirs=[np.get_include()],
                library_dirs=[os.path.join(os.path.dirname(np.__file__), "random", "lib")],
                libraries=["npyrandom", "m"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
