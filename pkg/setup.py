"""Builds the optional compiled extraction kernel.

Without Cython or a C++ compiler the package installs pure-Python and
``atbrg.subgraph`` falls back to ``_extract_py`` at import time.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("ATBRG_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "atbrg._extract_ext",
                ["src/atbrg/_extract_ext.pyx"],
                include_dirs=[np.get_include()],
                language="c++",
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
