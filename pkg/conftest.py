import numpy as np
import pytest

from bmat_store import write_bmat


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bmat_file(tmp_path):
    """Write a matrix to a BMAT file under tmp_path and return its path"""
    def _write(M, name="Y.bmat"):
        path = str(tmp_path / name)
        write_bmat(M, path)
        return path
    return _write
