import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []


def _host_simd_flags():
    """AVX2/FMA flags when the build host has them (opt out with COARSEFINE_PORTABLE=1)."""
    if os.environ.get("COARSEFINE_PORTABLE") == "1":
        return []
    try:
        with open("/proc/cpuinfo") as fh:
            flags = set(next((ln for ln in fh if ln.startswith("flags")), "").split())
    except OSError:
        return []
    return ["-mavx2", "-mfma"] if {"avx2", "fma"} <= flags else []


native = _host_simd_flags()
if os.environ.get("COARSEFINE_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "coarsefine._kernels",
                ["src/coarsefine/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # strict IEEE: counts must reproduce the numpy fallback bit-for-bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            ),
            Extension(
                "coarsefine._sinkhorn",
                ["src/coarsefine/_sinkhorn.pyx"],
                include_dirs=[np.get_include(), "src/coarsefine"],
                # relaxed maths lets gcc vectorise exp and the reductions; the kernel
                # never produces infinities, so finite-only maths is safe
                extra_compile_args=["-O3", "-ffast-math", *native],
                # glibc's vector maths library supplies the vectorised exp
                libraries=["mvec", "m"] if sys.platform.startswith("linux") else [],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            ),
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
