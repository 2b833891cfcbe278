"""Build the optional compiled Fock kernels; the package falls back to numpy without them."""
import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("BEC_LAB_PURE_BUILD") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "beclab._fock_ext",
        ["src/beclab/_fock_ext.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
