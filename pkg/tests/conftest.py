import os

# Single-threaded BLAS before numpy ever loads: bitwise run-to-run stability.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from rulfusion import synthetic


@pytest.fixture(scope="session")
def micro_data_dir(tmp_path_factory):
    """10-engine FD001-format fleet with short lives, shared across tests."""
    root = tmp_path_factory.mktemp("micro_fleet")
    synthetic.generate_micro(root, "FD001", n_train=10, n_test=10, seed=2024,
                             life_range=(70, 110))
    return root
