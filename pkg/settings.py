"""
Shared configuration for the BEAR toolkit

Environment values come from .env (see .env.example); everything else is a
module-level default that callers merge their overrides on top of.
"""

import os
import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from dotenv import load_dotenv
from threadpoolctl import threadpool_limits

# Load environment variables
load_dotenv()

VERSION = "0.3.0"

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_FILE = os.getenv('BEAR_LOG_FILE', 'bear.log')
LOG_LEVEL = os.getenv('BEAR_LOG_LEVEL', 'INFO')

# Largest min(n, m) that svd_small accepts
SVD_CAP = int(os.getenv('BEAR_SVD_CAP', '2048'))

# Largest payload read_bmat will materialize, and the CLI --memory-cap default
MEMORY_CAP_MB = int(os.getenv('BEAR_MEMORY_CAP_MB', '4096'))

DEFAULT_THREADS = int(os.getenv('BEAR_THREADS', '1'))

# ── Default config values (merged under every run's overrides) ─────────────

DEFAULT_TRAIN_CONFIG = {
    "learning_rate": 0.003,
    "epochs": 50,
    "batch_size": 1000,            # columns (frames) per mini-batch
    "seed": 0,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "early_stop_rel_tol": None,    # None = fixed epoch count
    "shuffle": True,               # permute column order every epoch
    "threads": DEFAULT_THREADS,
    "dtype": "float32",            # "float32" | "float64"
    "divergence_factor": 10.0,     # abort when epoch loss > factor * first epoch loss
}

DEFAULT_IALM_CONFIG = {
    "lam": None,                   # None = 1/sqrt(max(n, m))
    "mu0": None,                   # None = 1.25 / sigma_1(Y)
    "rho": 1.5,
    "tol": 1e-7,
    "max_iters": 1000,
    "mu_max_factor": 1e7,
}

DEFAULT_BENCH_CONFIG = {
    "n": 200,
    "ranks": [2, 10, 20],
    "rhos": [0.05, 0.2],
    "trials": 5,
    "lam": None,
    "seed": 0,
    "jobs": 1,
    "oracle": False,
}

DEFAULT_CASCADE_MU = 1.0

# Hyperparameters reported for the published experiments
PUBLISHED_PRESETS = {
    "synthetic": {"learning_rate": 0.003, "epochs": 50, "batch_size": 1000},
    "zebrafish-large": {"learning_rate": 0.00005, "epochs": 45, "batch_size": 64},
    "mouse-cascade": {"learning_rate": 0.0002, "epochs": 5000, "batch_size": 512,
                      "rank1": 1, "rank2": 8},
    "zebrafish-cascade": {"learning_rate": 0.0001, "epochs": 1000, "batch_size": 64,
                          "rank1": 1, "rank2": 50},
}


def configure_logging(log_file: Optional[str] = None, level: Optional[str] = None):
    """Configure root logging to file and console (stderr)"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file or LOG_FILE),
            logging.StreamHandler()
        ],
        force=True,
    )


@contextmanager
def thread_limit(threads: Optional[int]) -> Iterator[None]:
    """Cap BLAS threads for the enclosed block; None leaves the pool alone."""
    if threads is None:
        yield
        return
    with threadpool_limits(limits=max(1, int(threads))):
        yield
