"""Build script for the optional compiled kernels.

Metadata lives in pyproject.toml. If Cython or a compiler is missing the
package still installs and runs on the pure-Python kernels.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "rlworkbench._kernels._ckernels",
                ["src/rlworkbench/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O2", "-fno-fast-math", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
