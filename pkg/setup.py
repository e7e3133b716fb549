"""Builds the optional compiled QP kernels; the package works without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("STLBARRIER_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("stlbarrier.diffqp._kernels", ["src/stlbarrier/diffqp/_kernels.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
