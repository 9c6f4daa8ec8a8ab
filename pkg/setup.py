import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if os.environ.get("DSGRL_NO_EXT", "") in ("", "0"):
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
                    "dsgrl._ckernels",
                    ["src/dsgrl/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # keep a*b+c unfused so similarities match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )


class OptionalBuildExt(build_ext):
    """Fall back to the pure-Python kernels if the compiler is missing."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
