from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: the pure-Python fallback must produce bit-identical
# trajectories, so fused multiply-adds are disabled in the compiled kernel.
extensions = [
    Extension(
        "dcmgrid.admm._kernel",
        ["src/dcmgrid/admm/_kernel.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
