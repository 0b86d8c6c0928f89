import sys

from setuptools import setup

# The compiled split-search kernel is optional: without a working compiler the
# package falls back to the pure-numpy implementation selected at import time.
ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension(
            "effortmodels._kernel",
            ["src/effortmodels/_kernel.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - depends on build environment
    sys.stderr.write(f"warning: building without compiled kernel ({exc})\n")

setup(ext_modules=ext_modules)
