import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TREEDST_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("treedst.model._lstm", ["src/treedst/model/_lstm.pyx"], include_dirs=[np.get_include()])],
            compiler_directives={"language_level": 3, "boundscheck": False, "wraparound": False, "cdivision": True},
        )

setup(ext_modules=ext_modules)
