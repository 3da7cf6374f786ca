import os

import numpy as np
from setuptools import Extension, setup

# The compiled core is optional: without Cython or a compiler the package
# falls back to the pure-Python kernels at import time.
ext_modules = []
if os.environ.get("PERTURBMAP_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "perturbmap._kernels",
                    ["src/perturbmap/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
