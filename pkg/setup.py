import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "bpclip._kernels",
                sources=["src/bpclip/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
else:
    # The package still works without the extension: bpclip.kernels falls
    # back to the pure-numpy implementations at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
