"""Build the optional compiled core.

    pip install -e . --no-build-isolation

Without Cython (or a C compiler) the package installs with its pure-Python
kernels only.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PENALTYOPT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "penaltyopt._core",
                    ["src/penaltyopt/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
