from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:
    # Source tree still installs without Cython; lrt.sudoku falls back to the
    # pure-Python kernel at import time.
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("lrt._solver_core", ["src/lrt/_solver_core.pyx"])],
        language_level="3",
    )

setup(ext_modules=ext_modules)
