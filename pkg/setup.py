from setuptools import setup, Extension
from Cython.Build import cythonize
import numpy as np

extensions = [
    Extension(
        "evidence_scan",
        ["evidence_scan.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=['-O3', '-march=native'],
        language="c"
    ),
]

setup(
    name="rftrack",
    version="0.1.0",
    description="Containment and location inference over RFID reading streams",
    py_modules=[
        "baseline_smurf", "changepoint", "config_loader", "core_model", "distrib",
        "evidence_scan_py", "flask_app", "metrics", "monitor", "rfinfer",
        "rftrack_cli", "rftrack_server", "simulator", "trace_io", "truncation",
    ],
    install_requires=[
        "pyhcl>=0.4.4", "Flask>=3.0.0", "tornado>=6.4.0", "numpy>=1.24.0",
        "scipy>=1.10.0", "pandas>=2.0.0", "simpy>=4.0.0",
    ],
    entry_points={"console_scripts": ["rftrack=rftrack_cli:main"]},
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            'language_level': 3,
            'boundscheck': False,
            'wraparound': False,
            'cdivision': True,
            'embedsignature': True,
        }
    ),
)
