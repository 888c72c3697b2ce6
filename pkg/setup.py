"""Build script for the optional compiled recurrence kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time); set SBGRU_REQUIRE_EXT=1 to turn a failed extension
build into a hard error instead of a warning.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, cython missing, ...
            self._fail_or_warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._fail_or_warn(exc)

    def _fail_or_warn(self, exc):
        if os.environ.get("SBGRU_REQUIRE_EXT"):
            raise
        print(
            f"warning: compiled kernels were not built ({exc}); "
            "falling back to the pure-python backend",
            file=sys.stderr,
        )


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        if os.environ.get("SBGRU_REQUIRE_EXT"):
            raise
        print(f"warning: {exc}; building without compiled kernels", file=sys.stderr)
        return []
    return cythonize(
        [
            Extension(
                "sbgru.kernels._recurrence",
                ["src/sbgru/kernels/_recurrence.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
