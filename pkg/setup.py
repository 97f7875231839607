import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps the compiled kernels from fusing mul+add into FMA,
# so both backends perform the same sequence of IEEE roundings.
setup(
    ext_modules=cythonize(
        [
            Extension(
                "latentsr._kernels_cy",
                ["src/latentsr/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
)
