"""Build script: compiles the optional convolution kernel extension.

The package works without the extension (numpy fallback is selected at
import time); `optional=True` keeps installs alive on toolchain-less hosts.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "spikepose.nn._convkernels",
                sources=["src/spikepose/nn/_convkernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
