from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off keeps the compiled kernel's double arithmetic bit-identical
# to the pure-Python fallback (gcc would otherwise fuse a*b+c into FMA at -O2+).
setup(
    ext_modules=cythonize(
        [
            Extension(
                "blockpg._kernels",
                ["src/blockpg/_kernels.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
)
