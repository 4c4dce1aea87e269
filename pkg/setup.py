"""Builds the optional compiled kernel; the package works without it."""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("TODSTEP_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "todstep.kernels._ckernels",
                    ["src/todstep/kernels/_ckernels.pyx"],
                )
            ],
            language_level="3",
        )
    except Exception:
        ext_modules = []

setup(ext_modules=ext_modules)
