import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "csi_mtl.kernels._native",
        sources=["src/csi_mtl/kernels/_native.pyx"],
        include_dirs=[numpy.get_include(), "src/csi_mtl/kernels"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-march=native"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
