"""Build script.

The compiled simplex kernel is optional: if Cython or a C compiler is
unavailable the package installs anyway and falls back to the pure
NumPy kernel at import time.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"warning: compiled kernel skipped ({exc!r})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc!r}); "
                  "the pure-Python kernel will be used")


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "risksddp._simplex",
        ["src/risksddp/_simplex.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off: no fused multiply-add, so the compiled kernel
        # rounds exactly like the NumPy fallback (bitwise-equal results)
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
