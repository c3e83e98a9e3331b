"""Builds the optional compiled sweep; the package works without it."""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(["src/flgsr/_sweep.pyx"], language_level=3, quiet=True)
except ImportError:  # no Cython: pure-numpy backend only
    pass

setup(ext_modules=ext_modules)
