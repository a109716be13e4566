"""Builds the optional compiled rollout kernels.

If Cython or a C compiler is unavailable the package installs without them
and ``prefsim.envs`` falls back to the numpy implementation.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("prefsim.envs._kernels", ["src/prefsim/envs/_kernels.pyx"],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
