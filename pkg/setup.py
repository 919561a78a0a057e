"""Build the optional Cython queue kernels.

The package works without them: ``queuetoll.simulator.kernels`` falls back
to a pure-Python implementation when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("QUEUETOLL_NO_EXT") != "1":
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
                    "queuetoll.simulator._kernels",
                    ["src/queuetoll/simulator/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
