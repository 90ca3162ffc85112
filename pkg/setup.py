import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

openmp = [] if os.environ.get("ENSEMBLEREG_NO_OPENMP") else ["-fopenmp"]

ext = Extension(
    "ensemblereg._kernels",
    ["src/ensemblereg/_kernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"] + openmp,
    extra_link_args=openmp,
)

setup(ext_modules=cythonize([ext], language_level=3))
