import os

import numpy as np
from setuptools import Extension, setup

# Set MEMBRANE_WORKS_NO_EXT=1 to install without the compiled core.
ext_modules = []
if not os.environ.get("MEMBRANE_WORKS_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "membrane_works._ckernels",
                ["src/membrane_works/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math: the Allan kernel must match the reference bit-for-bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
