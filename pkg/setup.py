import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "xtr.kernels._topk_cy",
        ["src/xtr/kernels/_topk_cy.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: reassociation would break bitwise determinism
        extra_compile_args=["-O3", "-march=native"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
