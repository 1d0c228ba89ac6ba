import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("ZERMELO_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("zermelo._jetcore", ["src/zermelo/_jetcore.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
