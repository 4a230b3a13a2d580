import platform

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python kernels only
    ext_modules = []
else:
    args = ["-O3"]
    if platform.machine() in ("x86_64", "AMD64"):
        args.append("-mpopcnt")
    ext_modules = cythonize(
        [
            Extension(
                "xclp._kernels._ckernels",
                ["src/xclp/_kernels/_ckernels.pyx"],
                libraries=["gmp"],
                extra_compile_args=args,
                optional=True,
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
