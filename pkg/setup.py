"""Build script: compiles the optional Cython core.

If Cython or a C compiler is unavailable the install still succeeds and the
package falls back to the pure-numpy kernels at import time.
"""

import sys

from setuptools import setup


def _extensions():
    from Cython.Build import cythonize
    import numpy

    from setuptools import Extension

    ext = Extension(
        "bootstab._core",
        sources=["src/bootstab/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fno-math-errno"],
    )
    return cythonize([ext], language_level="3")


def _run(with_ext):
    setup(ext_modules=_extensions() if with_ext else [])


if __name__ == "__main__":
    try:
        _run(with_ext=True)
    except Exception as exc:  # missing Cython / compiler: install pure-python only
        sys.stderr.write(
            f"bootstab: compiled core unavailable ({exc.__class__.__name__}: {exc}); "
            "installing with the pure-numpy backend only\n"
        )
        _run(with_ext=False)
