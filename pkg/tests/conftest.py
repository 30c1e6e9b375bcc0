import numpy as np
import pytest

from aird.config import default_config
from aird.data import ShiftConfig, generate_dataset

FD_STEP = 1e-5


def numeric_gradient(fn, arr, h=FD_STEP):
    """Central finite differences of a scalar function w.r.t. one array.

    Independent oracle: evaluates ``fn`` twice per element and never touches
    the autodiff machinery.
    """
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        lo_hi = fn()
        flat[k] = old - h
        lo_lo = fn()
        flat[k] = old
        gflat[k] = (lo_hi - lo_lo) / (2 * h)
    return grad


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture(scope="session")
def tiny_cfg():
    """Config small enough for fast end-to-end train tests."""
    cfg = default_config()
    cfg["data.num_ids"] = 3
    cfg["data.samples_per_id"] = 6
    cfg["data.test_samples_per_id"] = 4
    cfg["teacher.blocks"] = [4, 8]
    cfg["student.blocks"] = [4, 8]
    cfg["teacher.embed_dim"] = 16
    cfg["student.embed_dim"] = 16
    cfg["train.epochs"] = 3
    cfg["train.milestones"] = []
    cfg["train.batch_size"] = 8
    cfg["distill.n_neg"] = 3
    cfg["distill.rel_dim"] = 8
    cfg["eval.pair_count"] = 30  # 3 ids x 4 test samples -> only 18 positive pairs exist
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg):
    return generate_dataset(
        tiny_cfg["data.num_ids"],
        tiny_cfg["data.samples_per_id"],
        seed=7,
        shift=ShiftConfig(brightness=0.1, noise=0.02),
        test_samples_per_id=tiny_cfg["data.test_samples_per_id"],
    )
