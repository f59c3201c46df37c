from setuptools import Extension, setup

# The compiled kernel is optional: without Cython the package installs
# pure-Python only and xenoflow._speed falls back at import time.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("xenoflow._fastpath", ["src/xenoflow/_fastpath.pyx"])],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
