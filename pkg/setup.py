"""Build script for the optional compiled LP kernel.

The package is fully functional without the extension; if the build
fails (no compiler, no Cython) we fall back to the pure numpy kernel
selected at import time in ``fleetflex.lp``.
"""

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"warning: compiled kernel skipped ({exc}); "
                  "using pure python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "using pure python fallback")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    import os

    if not os.path.exists("src/fleetflex/lp/_speedups.pyx"):
        return []
    ext = Extension(
        "fleetflex.lp._speedups",
        sources=["src/fleetflex/lp/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
