"""Build script: compiles the optional fast-kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so compilation failures are downgraded to a
warning rather than aborting the install.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "wavehydro._kernels",
                ["src/wavehydro/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fno-math-errno"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"fast kernels will not be built ({exc}); using NumPy fallback")
    ext_modules = []

setup(ext_modules=ext_modules)
