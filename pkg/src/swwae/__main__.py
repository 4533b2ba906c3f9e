import os
import sys

threads = os.environ.get("SWWAE_NUM_THREADS")
if threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)

from .cli import main

sys.exit(main())
