from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # pure-Python fallback in widesense.kernels is selected at import
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "widesense._ckernels",
                ["src/widesense/_ckernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )

setup(ext_modules=ext_modules)
