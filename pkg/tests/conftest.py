import os

# small dense problems: BLAS thread fan-out costs more than it saves, and on
# throttled CPUs it is catastrophic; must be set before numpy is imported
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
