import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "mfgmajor._kernels",
        ["src/mfgmajor/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no contraction: keep results bit-identical to the numpy fallback
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
