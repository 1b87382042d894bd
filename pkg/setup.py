"""Build script for the optional compiled ranking kernels.

The package works without the extension: coldwarm.ranking falls back to the
numpy implementation when ``coldwarm._ranking_cy`` is missing, so any build
failure here downgrades to a pure-Python install instead of breaking it.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class BuildFailed(Exception):
    pass


class optional_build_ext(build_ext):
    def run(self):
        try:
            build_ext.run(self)
        except Exception as exc:  # compiler missing, etc.
            raise BuildFailed(str(exc)) from exc

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as exc:
            raise BuildFailed(str(exc)) from exc


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "coldwarm._ranking_cy",
                ["src/coldwarm/_ranking_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )


def _run(with_ext):
    setup(
        ext_modules=_extensions() if with_ext else [],
        cmdclass={"build_ext": optional_build_ext},
    )


try:
    _run(with_ext=True)
except BuildFailed as exc:
    sys.stderr.write(
        f"WARNING: compiled ranking kernels failed to build ({exc}); "
        "installing with the pure-Python fallback.\n"
    )
    _run(with_ext=False)
