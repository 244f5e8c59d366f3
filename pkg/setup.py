import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

_np_root = os.path.dirname(np.__file__)

extensions = [
    Extension(
        "multiscale_mle._kernels._core",
        ["src/multiscale_mle/_kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[
            os.path.join(_np_root, "random", "lib"),
            os.path.join(_np_root, "_core", "lib"),
        ],
        libraries=["npyrandom", "npymath", "m"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no FMA contraction, so results match the numpy fallback bitwise
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

# MULTISCALE_MLE_NO_EXT=1 installs the pure-Python package only.
if os.environ.get("MULTISCALE_MLE_NO_EXT"):
    extensions = []

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
