"""Build script for the optional compiled kernel extension.

The package works without the extension: masklift.kernels falls back to a
pure-Python implementation at import time if the compiled module is missing.
"""
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, warn and continue if not."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, header mismatch, ...
            print(f"warning: compiled kernels skipped ({exc}); "
                  "falling back to the pure-Python backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to the pure-Python backend")


def make_extensions():
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "masklift.kernels._core",
        sources=["src/masklift/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
