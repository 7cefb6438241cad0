from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # no Cython: install with the pure-Python kernels
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension(
            "dnw._kernels",
            ["src/dnw/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # no FMA contraction: sums must round like the numpy fallback
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
