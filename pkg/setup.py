"""Build script for the compiled integration kernels.

The extension is optional: if the build toolchain is unavailable the
package still installs and falls back to the pure-numpy kernels at
import time (see gridshare._core).
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "gridshare._core._grid_cy",
                ["src/gridshare/_core/_grid_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
