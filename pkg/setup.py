import os

from setuptools import Extension, setup

# PARSHOOT_NO_EXT=1 installs the pure-Python package only; the kernels
# subpackage then falls back to the numpy engine at import time.
ext_modules = []
if not os.environ.get("PARSHOOT_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "parshoot.kernels._native",
                ["src/parshoot/kernels/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
